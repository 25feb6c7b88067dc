"""Separation quality measures against known references."""

import itertools
from dataclasses import dataclass

import numpy as np

from .mixture import Posterior
from .signal import StftConfig, Waveform, stft
from .simulate import SyntheticScene

__all__ = [
    "SeparationMetrics",
    "si_sdr",
    "oracle_masks",
    "permutation_consistency",
]


@dataclass(frozen=True)
class SeparationMetrics:
    """Scale-invariant SDR of an estimate, optionally with the unprocessed
    baseline for an improvement figure."""

    si_sdr_db: float
    baseline_db: float | None = None

    @property
    def improvement_db(self) -> float | None:
        if self.baseline_db is None:
            return None
        return self.si_sdr_db - self.baseline_db


def _as_mono(signal) -> np.ndarray:
    if isinstance(signal, Waveform):
        if signal.num_channels != 1:
            raise ValueError(
                f"metric expects a mono signal, got {signal.num_channels} channels"
            )
        return signal.samples[0]
    arr = np.asarray(signal, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"metric expects a 1-dim signal, got shape {arr.shape}")
    return arr


def si_sdr(estimate, reference) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    The reference is rescaled by the orthogonal projection of the estimate
    onto it, so constant gains do not affect the score. The result is
    clipped to [-100, 100] dB; numerically identical signals report the
    +100 cap instead of infinity.
    """
    est = _as_mono(estimate)
    ref = _as_mono(reference)
    if est.shape != ref.shape:
        raise ValueError(
            f"estimate and reference lengths differ: {est.shape[0]} vs {ref.shape[0]}"
        )
    ref_power = np.dot(ref, ref)
    if ref_power <= 0.0:
        raise ValueError("reference signal is silent")
    projection = (np.dot(ref, est) / ref_power) * ref
    distortion = est - projection
    target_power = np.dot(projection, projection)
    distortion_power = np.dot(distortion, distortion)
    if distortion_power <= 1e-20 * target_power:
        return 100.0
    if target_power == 0.0:
        return -100.0
    return float(np.clip(10.0 * np.log10(target_power / distortion_power), -100.0, 100.0))


def oracle_masks(scene: SyntheticScene, config: StftConfig) -> np.ndarray:
    """One-hot dominance masks from the true source images.

    Per (frame, bin) the strongest component on the first microphone wins.
    When the scene carries sensor noise, the noise class competes with its
    own measured power, so bins below the noise floor belong to class 0.
    Bins whose total source power is negligible (below 1e-8 of the
    average) fall to the noise class either way.

    Returns:
        (1 + S, T, F) float64 one-hot tensor.
    """
    powers = []
    for s in range(scene.images.shape[0]):
        image = Waveform(scene.images[s, :1], scene.mixture.sample_rate)
        powers.append(np.abs(stft(image, config).bins[0]) ** 2)
    powers = np.stack(powers)
    total = powers.sum(axis=0)
    silent = total <= 1e-8 * max(total.mean(), 1e-300)
    if scene.noise is not None:
        floor = Waveform(scene.noise[:1], scene.mixture.sample_rate)
        noise_power = np.abs(stft(floor, config).bins[0]) ** 2
    else:
        noise_power = np.zeros_like(total)
    winner = np.concatenate([noise_power[None], powers]).argmax(axis=0)
    winner[silent] = 0

    masks = np.zeros((1 + len(powers),) + total.shape)
    for k in range(masks.shape[0]):
        masks[k][winner == k] = 1.0
    return masks


def permutation_consistency(posterior, oracle: np.ndarray) -> float:
    """Agreement between posterior argmax and oracle class, maximised over
    global speaker permutations.

    Only bins the oracle assigns to a source count; the noise class is
    pinned, speaker classes may be relabelled by one permutation applied
    everywhere. 1.0 means the fitted classes are a pure relabelling of the
    oracle sources.
    """
    gamma = posterior.gamma if isinstance(posterior, Posterior) else np.asarray(posterior)
    if gamma.shape != oracle.shape:
        raise ValueError(
            f"posterior shape {gamma.shape} does not match oracle {oracle.shape}"
        )
    classes = gamma.shape[0]
    estimated = gamma.argmax(axis=0)
    truth = oracle.argmax(axis=0)
    speech = truth > 0
    if not np.any(speech):
        raise ValueError("oracle assigns no bin to any source")
    est, tru = estimated[speech], truth[speech]

    best = 0.0
    for perm in itertools.permutations(range(1, classes)):
        relabel = np.arange(classes)
        relabel[1:] = perm
        best = max(best, float(np.mean(est == relabel[tru])))
    return best
