"""Spatial mixture model with annotation-guided class posteriors.

Per frequency bin, the channel-normalised observation directions are
modelled by a mixture of complex angular central Gaussian components, one
per speaker plus one noise class (class index 0). Speaker activity from
the annotations clamps posteriors of inactive speakers to exactly zero in
every EM iteration, which resolves the class/speaker permutation per bin
by construction.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .signal import Spectrogram

logger = logging.getLogger(__name__)

__all__ = [
    "DirectionalObservations",
    "ActivityMask",
    "MixtureParams",
    "Posterior",
    "EmConfig",
    "normalize_observations",
    "init_posteriors",
    "em_fit",
    "trim_context",
]


@dataclass(frozen=True)
class DirectionalObservations:
    """Unit-norm observation directions, shape (T, F, D).

    ``valid`` marks frames whose original vector had non-zero norm; the
    others carry a uniform placeholder direction and are excluded from the
    model statistics.
    """

    units: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        units = np.asarray(self.units, dtype=np.complex128)
        valid = np.asarray(self.valid, dtype=bool)
        if units.ndim != 3:
            raise ValueError(f"units must be (T, F, D), got shape {units.shape}")
        if units.shape[2] < 2:
            raise ValueError(f"need at least 2 channels, got {units.shape[2]}")
        if valid.shape != units.shape[:2]:
            raise ValueError(
                f"valid mask shape {valid.shape} does not match units {units.shape[:2]}"
            )
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "valid", valid)

    @property
    def num_frames(self) -> int:
        return self.units.shape[0]

    @property
    def num_bins(self) -> int:
        return self.units.shape[1]

    @property
    def num_channels(self) -> int:
        return self.units.shape[2]


@dataclass(frozen=True)
class ActivityMask:
    """Class-by-frame activity, shape (K, T), class 0 is the noise class.

    The noise class is always active, so every frame has at least one
    admissible mixture component.
    """

    active: np.ndarray

    def __post_init__(self):
        active = np.asarray(self.active, dtype=bool)
        if active.ndim != 2 or active.shape[0] < 1:
            raise ValueError(f"activity must be (K, T) with K >= 1, got shape {active.shape}")
        if not active[0].all():
            raise ValueError("noise class (row 0) must be active in every frame")
        object.__setattr__(self, "active", active)

    @property
    def num_classes(self) -> int:
        return self.active.shape[0]

    @property
    def num_frames(self) -> int:
        return self.active.shape[1]


@dataclass(frozen=True)
class MixtureParams:
    """Fitted mixture: weights (F, K) on the simplex, shapes (F, K, D, D)
    Hermitian with trace equal to the channel count."""

    weights: np.ndarray
    shapes: np.ndarray


@dataclass(frozen=True)
class Posterior:
    """Class posteriors gamma, shape (K, T, F)."""

    gamma: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.gamma.shape[0]

    @property
    def num_frames(self) -> int:
        return self.gamma.shape[1]


@dataclass(frozen=True)
class EmConfig:
    """EM schedule and numerical guards.

    Attributes:
        iterations: EM iterations on the full (context-extended) segment.
        eps_load: relative diagonal loading applied to shape matrices
            before inversion.
        weight_floor: lower bound on mixture weights, renormalised after
            flooring.
        context_frames: context width bookkeeping, not used by the fit.
        refine_iterations: extra iterations restricted to the core frames
            after context trimming; 0 disables the refinement stage.
    """

    iterations: int = 20
    eps_load: float = 1e-6
    weight_floor: float = 1e-4
    context_frames: int = 0
    refine_iterations: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be at least 1, got {self.iterations}")
        if self.eps_load <= 0:
            raise ValueError("eps_load must be positive")
        if not 0 < self.weight_floor < 1:
            raise ValueError(f"weight_floor must be in (0, 1), got {self.weight_floor}")
        if self.context_frames < 0 or self.refine_iterations < 0:
            raise ValueError("context_frames and refine_iterations must be non-negative")


def normalize_observations(spectrogram: Spectrogram) -> DirectionalObservations:
    """Project STFT vectors onto the unit sphere, dropping level information.

    Zero vectors cannot be normalised; they receive the uniform real
    direction 1/sqrt(D) and are flagged invalid.
    """
    if spectrogram.num_channels < 2:
        raise ValueError(
            f"need at least 2 channels to model spatial structure, "
            f"got {spectrogram.num_channels}"
        )
    obs = spectrogram.bins.transpose(1, 2, 0)
    norm = np.linalg.norm(obs, axis=-1)
    valid = norm > 0.0
    channels = obs.shape[-1]
    units = np.where(
        valid[..., None],
        obs / np.where(valid, norm, 1.0)[..., None],
        np.full(channels, 1.0 / np.sqrt(channels), dtype=np.complex128),
    )
    return DirectionalObservations(units=units, valid=valid)


def init_posteriors(activity: ActivityMask, num_bins: int) -> Posterior:
    """Uniform posterior over the admissible classes of every frame."""
    active = activity.active
    gamma = active / active.sum(axis=0, keepdims=True)
    return Posterior(gamma=np.repeat(gamma[:, :, None], num_bins, axis=2).astype(np.float64))


def _prepare_shapes(shapes: np.ndarray, eps_load: float):
    """Loaded inverse and log-determinant of a stack of shape matrices.

    Returns (inverse, logdet) for shapes + eps_load * (trace / D) * I, the
    form used consistently for every density evaluation.
    """
    dim = shapes.shape[-1]
    trace = np.einsum("...dd->...", shapes).real
    loaded = shapes + (eps_load * trace / dim)[..., None, None] * np.eye(dim)
    inv = np.linalg.inv(loaded)
    inv = 0.5 * (inv + np.swapaxes(inv, -1, -2).conj())
    _, logdet = np.linalg.slogdet(loaded)
    return inv, logdet


def _em_block(units, valid, active, gamma, config):
    """Run the EM iterations for one block of frequency bins.

    Args:
        units: (F, T, D) unit observations.
        valid: (F, T) bool.
        active: (K, T) bool.
        gamma: (F, K, T) initial posteriors.
        config: EmConfig.

    Returns:
        (weights (F, K), shapes (F, K, D, D), gamma (F, K, T),
         log-likelihood per iteration (iterations,)).
    """
    bins, frames, dim = units.shape
    classes = active.shape[0]
    eye = np.eye(dim, dtype=np.complex128)
    shapes = np.broadcast_to(eye, (bins, classes, dim, dim)).copy()
    weights = np.full((bins, classes), 1.0 / classes)

    # Posterior of invalid frames: uniform over the admissible classes.
    uniform = (active / active.sum(axis=0, keepdims=True))[None, :, :]

    inv, logdet = _prepare_shapes(shapes, config.eps_load)
    quad = _quadratic_form(units, inv)
    likelihoods = np.zeros(config.iterations)

    for it in range(config.iterations):
        # M-step: re-estimate weights and shape matrices from the current
        # posteriors; invalid frames carry no weight.
        masked = gamma * valid[:, None, :]
        denom = masked.sum(axis=-1)
        scaled = masked / quad
        numer = np.einsum("fkt,ftd,fte->fkde", scaled, units, units.conj(), optimize=True)
        update = dim * numer / np.maximum(denom, 1e-300)[:, :, None, None]
        shapes = np.where((denom > 0.0)[:, :, None, None], update, shapes)
        shapes = 0.5 * (shapes + np.swapaxes(shapes, -1, -2).conj())
        trace = np.einsum("...dd->...", shapes).real
        shapes = np.where(
            (trace > 1e-300)[:, :, None, None], shapes * (dim / np.maximum(trace, 1e-300))[:, :, None, None], eye
        )

        total = denom.sum(axis=-1, keepdims=True)
        weights = np.where(total > 0.0, denom / np.maximum(total, 1e-300), 1.0 / classes)
        weights = np.maximum(weights, config.weight_floor)
        weights = weights / weights.sum(axis=-1, keepdims=True)

        # E-step: clamped posteriors under the refreshed parameters.
        inv, logdet = _prepare_shapes(shapes, config.eps_load)
        quad = _quadratic_form(units, inv)
        log_score = (
            np.log(weights)[:, :, None]
            - logdet[:, :, None]
            - dim * np.log(quad)
        )
        log_score = np.where(active[None, :, :], log_score, -np.inf)
        peak = log_score.max(axis=1, keepdims=True)
        log_norm = peak + np.log(
            np.sum(np.exp(log_score - peak), axis=1, keepdims=True)
        )
        gamma = np.where(active[None, :, :], np.exp(log_score - log_norm), 0.0)

        # Defensive: a frame whose posterior mass vanished entirely is
        # assigned to the noise class.
        mass = gamma.sum(axis=1, keepdims=True)
        dead = mass <= 0.0
        if np.any(dead):
            gamma = np.where(dead & (np.arange(classes) == 0)[None, :, None], 1.0, gamma)
            gamma = np.where(dead & (np.arange(classes) != 0)[None, :, None], 0.0, gamma)
        gamma = np.where(valid[:, None, :], gamma, uniform)

        likelihoods[it] = np.sum(log_norm[:, 0, :], where=valid)
        if not np.isfinite(likelihoods[it]):
            raise RuntimeError(
                f"mixture model EM produced a non-finite log-likelihood "
                f"at iteration {it}"
            )

    return weights, shapes, gamma, likelihoods


def _quadratic_form(units: np.ndarray, inv: np.ndarray) -> np.ndarray:
    """Real quadratic form z^H B^-1 z.

    Args:
        units: (F, T, D).
        inv: (F, K, D, D).

    Returns:
        (F, K, T) values, clipped away from zero.
    """
    quad = np.einsum("ftd,fkde,fte->fkt", units.conj(), inv, units, optimize=True).real
    return np.clip(quad, 1e-12, None)


def em_fit(
    observations: DirectionalObservations,
    activity: ActivityMask,
    config: EmConfig = EmConfig(),
    initial: Posterior | None = None,
    return_likelihoods: bool = False,
):
    """Fit the guided mixture model.

    Each iteration runs the M-step on the current posteriors and then the
    clamped E-step under the refreshed parameters; the first M-step
    consumes the activity-uniform initialisation (or ``initial``). The
    log-likelihood of the restricted mixture is recorded after every
    E-step and is non-decreasing up to the diagonal-loading perturbation.

    Args:
        observations: (T, F, D) unit directions with validity mask.
        activity: (K, T) admissible classes per frame.
        config: EM schedule.
        initial: posterior warm start, defaults to the activity-uniform
            initialisation.
        return_likelihoods: also return the per-iteration log-likelihood.

    Returns:
        (MixtureParams, Posterior), plus the likelihood trace when
        requested.
    """
    frames, bins, dim = observations.units.shape
    if activity.num_frames != frames:
        raise ValueError(
            f"activity covers {activity.num_frames} frames, observations "
            f"have {frames}"
        )
    classes = activity.num_classes
    if initial is None:
        initial = init_posteriors(activity, bins)
    if initial.gamma.shape != (classes, frames, bins):
        raise ValueError(
            f"initial posterior shape {initial.gamma.shape} does not match "
            f"(K, T, F) = {(classes, frames, bins)}"
        )

    units = observations.units.transpose(1, 0, 2)
    valid = observations.valid.T
    gamma0 = initial.gamma.transpose(2, 0, 1)

    weights = np.empty((bins, classes))
    shapes = np.empty((bins, classes, dim, dim), dtype=np.complex128)
    gamma = np.empty((bins, classes, frames))
    likelihoods = np.zeros(config.iterations)

    block = max(1, 2 ** 21 // max(1, classes * frames * dim))
    for lo in range(0, bins, block):
        hi = min(bins, lo + block)
        weights[lo:hi], shapes[lo:hi], gamma[lo:hi], block_ll = _em_block(
            units[lo:hi], valid[lo:hi], activity.active, gamma0[lo:hi].copy(), config
        )
        likelihoods += block_ll

    params = MixtureParams(weights=weights, shapes=shapes)
    posterior = Posterior(gamma=gamma.transpose(1, 2, 0))
    if return_likelihoods:
        return params, posterior, likelihoods
    return params, posterior


def trim_context(posterior: Posterior, core: range) -> Posterior:
    """Drop context frames, keeping posteriors for the core span only."""
    frames = posterior.gamma.shape[1]
    start, stop = core.start, core.stop
    if not 0 <= start < stop <= frames:
        raise ValueError(
            f"empty core segment: range [{start}, {stop}) is not a "
            f"non-empty sub-range of {frames} frames"
        )
    return Posterior(gamma=posterior.gamma[:, start:stop, :])
