"""Short-time Fourier analysis and synthesis for multi-channel audio.

Shape conventions used throughout the package:
    M: number of microphone channels
    T: number of STFT frames
    F: number of frequency bins (fft_size // 2 + 1)
    L: number of time-domain samples
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "StftConfig",
    "Waveform",
    "Spectrogram",
    "num_frames",
    "stft",
    "istft",
]


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameters shared by all spectral processing.

    Attributes:
        fft_size: DFT length in samples, must be even.
        shift: hop between adjacent frames in samples, 0 < shift <= fft_size.
        window: window family; only "hann" (periodic) is offered.
        pad_mode: edge handling before framing, "symmetric-edge" mirrors the
            signal tails, "zero" pads with silence.
    """

    fft_size: int = 1024
    shift: int = 256
    window: str = "hann"
    pad_mode: str = "symmetric-edge"

    def __post_init__(self):
        if self.fft_size <= 0 or self.fft_size % 2 != 0:
            raise ValueError(
                f"bad stft config: fft_size must be a positive even integer, "
                f"got {self.fft_size}"
            )
        if not 0 < self.shift <= self.fft_size:
            raise ValueError(
                f"bad stft config: shift must satisfy 0 < shift <= fft_size, "
                f"got shift={self.shift}, fft_size={self.fft_size}"
            )
        if self.window != "hann":
            raise ValueError(f"bad stft config: unsupported window {self.window!r}")
        if self.pad_mode not in ("symmetric-edge", "zero"):
            raise ValueError(f"bad stft config: unsupported pad_mode {self.pad_mode!r}")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        """Samples of edge padding prepended (and appended) before framing."""
        return self.fft_size - self.shift


@dataclass(frozen=True)
class Waveform:
    """Multi-channel time-domain signal, samples laid out as (M, L) float64."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValueError(f"waveform samples must be 2-dim (M, L), got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.samples.shape[1] / self.sample_rate

    @classmethod
    def from_mono(cls, samples, sample_rate: int) -> "Waveform":
        return cls(np.atleast_2d(np.asarray(samples, dtype=np.float64)), sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT tensor of shape (M, T, F) plus the config that made it."""

    bins: np.ndarray
    config: StftConfig
    sample_rate: int

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.ndim != 3:
            raise ValueError(f"spectrogram bins must be 3-dim (M, T, F), got shape {bins.shape}")
        if bins.shape[2] != self.config.num_bins:
            raise ValueError(
                f"spectrogram has {bins.shape[2]} bins, config expects {self.config.num_bins}"
            )
        object.__setattr__(self, "bins", bins)

    @property
    def num_channels(self) -> int:
        return self.bins.shape[0]

    @property
    def num_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def num_bins(self) -> int:
        return self.bins.shape[2]

    def take_frames(self, frames: range) -> "Spectrogram":
        """Frame-axis slice keeping config and rate."""
        return Spectrogram(self.bins[:, frames.start:frames.stop], self.config, self.sample_rate)


def _analysis_window(config: StftConfig) -> np.ndarray:
    # Periodic Hann, so that window power sums tile exactly at integer
    # fractions of the DFT length.
    n = np.arange(config.fft_size)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / config.fft_size)


def num_frames(num_samples: int, config: StftConfig) -> int:
    """Frame count produced by :func:`stft` for a signal of given length.

    The last frame is the one whose span still contains the final padded
    input sample; anything beyond is completed with zeros.
    """
    if num_samples <= 0:
        raise ValueError("empty signal")
    return 1 + (config.pad + num_samples - 1) // config.shift


def stft(waveform: Waveform, config: StftConfig) -> Spectrogram:
    """Windowed short-time transform of every channel.

    The signal is padded with ``config.pad`` samples on both ends (mirrored
    or zero, per ``pad_mode``) so that the first frame is centred near the
    first sample, then carved into ``num_frames`` hops of ``shift`` samples.

    Returns:
        Spectrogram with bins of shape (M, T, F).
    """
    if waveform.num_samples == 0:
        raise ValueError("empty signal")
    frames = num_frames(waveform.num_samples, config)
    total = (frames - 1) * config.shift + config.fft_size
    pad = config.pad
    mode = "symmetric" if config.pad_mode == "symmetric-edge" else "constant"
    padded = np.pad(waveform.samples, ((0, 0), (pad, pad)), mode=mode)
    extra = total - padded.shape[1]
    if extra > 0:
        padded = np.pad(padded, ((0, 0), (0, extra)), mode="constant")

    window = _analysis_window(config)
    strided = np.lib.stride_tricks.sliding_window_view(padded, config.fft_size, axis=1)
    segments = strided[:, :: config.shift][:, :frames] * window
    return Spectrogram(
        np.fft.rfft(segments, n=config.fft_size, axis=-1),
        config,
        waveform.sample_rate,
    )


def _overlap_denominator(window: np.ndarray, shift: int) -> np.ndarray:
    """Squared-window lattice sum over one hop period.

    ``den[j] = sum_k window[j + k * shift] ** 2`` is the steady-state
    overlap-add weight at offset j. Near-zero entries mean some sample
    positions are never observed and synthesis cannot be exact.
    """
    den = np.zeros(shift)
    for start in range(0, len(window), shift):
        chunk = window[start:start + shift] ** 2
        den[: len(chunk)] += chunk
    return den


def istft(spectrogram: Spectrogram, target_length: int, offset: int | None = None) -> Waveform:
    """Overlap-add synthesis back to the time domain.

    Each frame is inverse-transformed, windowed again, and accumulated at
    its hop position; the accumulator is normalised by the per-position sum
    of squared window values, which makes the analysis/synthesis pair an
    identity wherever frames fully overlap. The operation is linear in the
    spectrogram bins.

    Args:
        spectrogram: (M, T, F) analysis result, possibly modified.
        target_length: number of output samples per channel.
        offset: sample index into the frame grid where the output starts.
            Defaults to ``config.pad``, which undoes the padding applied by
            :func:`stft` for a spectrogram covering a whole signal. Pass an
            explicit offset when synthesising from a frame subset.

    Raises:
        ValueError: if the window/shift pair loses sample positions
            ("reconstruction unsupported").
    """
    config = spectrogram.config
    window = _analysis_window(config)
    den = _overlap_denominator(window, config.shift)
    if den.min() <= 1e-6 * den.max():
        raise ValueError(
            f"reconstruction unsupported: window/shift pair "
            f"({config.window}, {config.shift}/{config.fft_size}) does not cover "
            f"all sample positions"
        )
    if target_length < 0:
        raise ValueError(f"target_length must be non-negative, got {target_length}")
    if offset is None:
        offset = config.pad

    channels, frames, _ = spectrogram.bins.shape
    total = (frames - 1) * config.shift + config.fft_size if frames else config.fft_size
    acc = np.zeros((channels, total))
    weight = np.zeros(total)
    segments = np.fft.irfft(spectrogram.bins, n=config.fft_size, axis=-1) * window
    for t in range(frames):
        start = t * config.shift
        acc[:, start:start + config.fft_size] += segments[:, t]
        weight[start:start + config.fft_size] += window ** 2
    # Partial overlap at the grid edges still gets amplitude-correct
    # normalisation down to 1% of the steady-state weight. Below that the
    # divisor is floored: modified spectra are not frame-consistent, and
    # renormalising a near-zero window tail would amplify the inconsistency
    # without bound. Positions never touched by any window stay zero.
    floor = 1e-2 * den.min()
    out = acc / np.maximum(weight, floor)

    result = np.zeros((channels, target_length))
    hi = min(total, offset + target_length)
    if offset < hi:
        result[:, : hi - offset] = out[:, offset:hi]
    return Waveform(result, spectrogram.sample_rate)
