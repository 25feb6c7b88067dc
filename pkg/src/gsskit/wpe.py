"""Multi-channel dereverberation by weighted linear prediction.

Late reverberation is estimated per frequency bin as a linear prediction
from a block of delayed STFT frames, stacked across all input channels,
and subtracted from the observation. All channels are dereverberated
jointly (M inputs, M outputs); frequency bins never interact.
"""

from dataclasses import dataclass

import numpy as np

from .signal import Spectrogram

__all__ = ["WpeConfig", "WpeDiagnostics", "wpe_dereverberate"]


@dataclass(frozen=True)
class WpeConfig:
    """Prediction-filter geometry and iteration control.

    Attributes:
        taps: number of stacked history frames per channel.
        delay: frames between the predicted frame and the newest history
            frame, keeps early reflections in the output.
        iterations: alternations of power estimation and filter refit.
        psd_smoothing_context: frames of temporal context (each side) for
            smoothing the power estimate; 0 disables smoothing.
        eps: relative ridge weight for the correlation matrix solve.
    """

    taps: int = 10
    delay: int = 2
    iterations: int = 3
    psd_smoothing_context: int = 0
    eps: float = 1e-6

    def __post_init__(self):
        if self.taps <= 0:
            raise ValueError(f"taps must be positive, got {self.taps}")
        if self.delay < 1:
            raise ValueError(f"delay must be at least 1, got {self.delay}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be at least 1, got {self.iterations}")
        if self.psd_smoothing_context < 0:
            raise ValueError("psd_smoothing_context must be non-negative")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


@dataclass
class WpeDiagnostics:
    """Per-iteration value of the prediction objective.

    The objective is

        sum_t ||output_t||^2 / lambda_t + M log lambda_t  +  ridge * ||G||^2

    over predicted frames, evaluated after each filter update. The ridge
    weight is frozen after the first power estimate, so every update is an
    exact coordinate-descent step and the sequence is non-increasing as
    long as power smoothing is disabled.
    """

    objective: np.ndarray


def _smooth_power(power: np.ndarray, context: int) -> np.ndarray:
    """Moving average over (2*context + 1) frames along the last axis."""
    if context == 0:
        return power
    width = 2 * context + 1
    padded = np.pad(power, ((0, 0), (context, context)), mode="edge")
    kernel = np.ones(width) / width
    return np.apply_along_axis(lambda row: np.convolve(row, kernel, mode="valid"), 1, padded)


def _stack_history(obs: np.ndarray, taps: int, delay: int) -> np.ndarray:
    """Build the delayed multi-channel regression blocks.

    Args:
        obs: (F, T, M) observation.

    Returns:
        (F, T, M * taps) where entry t stacks frames t - delay, ...,
        t - delay - taps + 1 over all channels. Frames reaching before the
        segment start are zero.
    """
    bins, frames, channels = obs.shape
    stacked = np.zeros((bins, frames, channels * taps), dtype=obs.dtype)
    for k in range(taps):
        lag = delay + k
        if lag >= frames:
            continue
        stacked[:, lag:, k * channels:(k + 1) * channels] = obs[:, : frames - lag]
    return stacked


def wpe_dereverberate(
    spectrogram: Spectrogram,
    config: WpeConfig = WpeConfig(),
    return_diagnostics: bool = False,
):
    """Suppress late reverberation in every channel of an STFT tensor.

    Frames earlier than ``delay + taps`` have incomplete prediction history
    and are passed through unmodified. A zero observation stays zero.

    Args:
        spectrogram: (M, T, F) input.
        config: prediction geometry, see :class:`WpeConfig`.
        return_diagnostics: also return the per-iteration objective.

    Returns:
        Dereverberated Spectrogram of identical shape, or a tuple of that
        and :class:`WpeDiagnostics` when requested.
    """
    channels, frames, bins = spectrogram.bins.shape
    if frames <= config.delay + config.taps:
        raise ValueError(
            f"segment too short for dereverberation: {frames} frames, "
            f"need more than delay + taps = {config.delay + config.taps}"
        )

    order = channels * config.taps
    first = config.delay + config.taps
    output = spectrogram.bins.copy()
    objective = np.zeros(config.iterations)

    # Chunk the frequency axis so the stacked history tensor stays small.
    chunk = max(1, 2 ** 22 // max(1, frames * order))
    for lo in range(0, bins, chunk):
        hi = min(bins, lo + chunk)
        obs = np.ascontiguousarray(spectrogram.bins[:, :, lo:hi].transpose(2, 1, 0))
        active = np.mean(np.abs(obs) ** 2, axis=(1, 2)) > 0.0
        if not np.any(active):
            continue
        obs = obs[active]
        history = _stack_history(obs, config.taps, config.delay)[:, first:]
        tail = obs[:, first:]
        estimate = obs.copy()

        floor = 1e-10 * np.mean(np.abs(obs) ** 2, axis=(1, 2))
        eye = np.eye(order)
        ridge = None
        for it in range(config.iterations):
            power = np.mean(np.abs(estimate) ** 2, axis=2)
            power = _smooth_power(power, config.psd_smoothing_context)
            lam = np.maximum(power, floor[:, None])[:, first:]

            weighted = history / lam[:, :, None]
            corr = weighted.transpose(0, 2, 1) @ history.conj()
            if ridge is None:
                ridge = config.eps * np.trace(corr, axis1=1, axis2=2).real / order
            cross = weighted.transpose(0, 2, 1) @ tail.conj()
            filters = np.linalg.solve(corr + ridge[:, None, None] * eye, cross)

            estimate[:, first:] = tail - np.einsum(
                "fpm,ftp->ftm", filters.conj(), history
            )
            residual = np.sum(np.abs(estimate[:, first:]) ** 2, axis=2)
            objective[it] += np.sum(residual / lam + channels * np.log(lam))
            objective[it] += np.sum(ridge * np.sum(np.abs(filters) ** 2, axis=(1, 2)))

        out_chunk = output[:, :, lo:hi]
        out_chunk[:, :, active] = estimate.transpose(2, 1, 0)
        output[:, :, lo:hi] = out_chunk

    result = Spectrogram(output, spectrogram.config, spectrogram.sample_rate)
    if return_diagnostics:
        return result, WpeDiagnostics(objective=objective)
    return result
