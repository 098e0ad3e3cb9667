"""Discrete variance-preserving noise schedules.

Steps are indexed t = 1..T; t = 0 denotes the clean image, and
``alpha_bar_at(0)`` is defined as 1 so the terminal reverse step returns
the current clean-image estimate exactly.  Arrays are 0-based:
``beta[i]`` belongs to step t = i + 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

VARIANCE_MODES = ("zero", "posterior")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step beta/alpha tables plus the sampling standard deviations.

    ``timestep_map[i]`` is the step index to report to a score model for
    internal step i + 1; it differs from the identity only for respaced
    (strided) schedules built on top of a model's native schedule.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma_tilde: np.ndarray
    timestep_map: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.timestep_map is None:
            object.__setattr__(self, "timestep_map", np.arange(1, len(self.beta) + 1))
        for arr in (self.beta, self.alpha, self.alpha_bar, self.sigma_tilde, self.timestep_map):
            arr.setflags(write=False)

    @property
    def steps(self) -> int:
        return len(self.beta)

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative alpha product at step t, with the t = 0 boundary fixed to 1."""
        if t < 0 or t > self.steps:
            raise ParameterError(f"step {t} outside [0, {self.steps}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def model_timestep(self, t: int) -> int:
        """Step index a score model should see for internal step t."""
        if t < 1 or t > self.steps:
            raise ParameterError(f"step {t} outside [1, {self.steps}]")
        return int(self.timestep_map[t - 1])


def _sigma_tilde_from(beta: np.ndarray, alpha_bar: np.ndarray, variance: str) -> np.ndarray:
    if variance not in VARIANCE_MODES:
        raise ParameterError(f"variance mode must be one of {VARIANCE_MODES}, got {variance!r}")
    if variance == "zero":
        return np.zeros_like(beta)
    # Forward-posterior variance of the reverse kernel; zero at t = 1 since
    # alpha_bar_0 = 1, and zero wherever the step adds no noise.
    sig2 = np.zeros_like(beta)
    prev = np.concatenate(([1.0], alpha_bar[:-1]))
    nonzero = (1.0 - alpha_bar) > 0
    sig2[nonzero] = (1.0 - prev[nonzero]) / (1.0 - alpha_bar[nonzero]) * beta[nonzero]
    return np.sqrt(sig2)


def from_betas(betas, variance: str = "zero", timestep_map=None) -> NoiseSchedule:
    """Build a schedule from an explicit beta array.

    Bounds are relaxed to 0 <= beta < 1 so degenerate test schedules
    (all-zero beta) can be constructed; strict monotonicity of alpha_bar
    is only guaranteed when every beta is positive.
    """
    beta = np.asarray(betas, dtype=np.float64).copy()
    if beta.ndim != 1 or len(beta) < 1:
        raise ParameterError("betas must be a non-empty 1-D sequence")
    if beta.min() < 0.0 or beta.max() >= 1.0:
        raise ParameterError(f"betas must lie in [0, 1), got [{beta.min()}, {beta.max()}]")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma_tilde = _sigma_tilde_from(beta, alpha_bar, variance)
    tsm = None if timestep_map is None else np.asarray(timestep_map, dtype=np.int64).copy()
    return NoiseSchedule(beta, alpha, alpha_bar, sigma_tilde, tsm)


def build_linear_schedule(
    steps: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    variance: str = "zero",
) -> NoiseSchedule:
    """Linearly interpolated beta schedule over ``steps`` steps.

    The defaults match the schedule commonly used by pretrained
    pixel-space denoisers; remote models override it during the
    protocol handshake.
    """
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    return from_betas(beta, variance=variance)


def respaced(schedule: NoiseSchedule, stride: int, variance: str = "zero") -> NoiseSchedule:
    """Evaluate every ``stride``-th step of ``schedule``.

    Keeps the terminal step T and walks backward, so the sub-chain always
    starts from the fully-noised state.  The derived betas satisfy
    1 - beta'_j = alpha_bar(tau_j) / alpha_bar(tau_{j-1}) for the retained
    steps tau, and ``timestep_map`` records the original indices so score
    models are still queried at steps they were trained on.
    """
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if stride == 1:
        return schedule
    kept = list(range(schedule.steps, 0, -stride))[::-1]
    abar_prev = np.array([schedule.alpha_bar_at(t) for t in [0] + kept[:-1]])
    abar_kept = np.array([schedule.alpha_bar_at(t) for t in kept])
    beta = 1.0 - abar_kept / abar_prev
    original_t = np.array([schedule.model_timestep(t) for t in kept], dtype=np.int64)
    return from_betas(beta, variance=variance, timestep_map=original_t)
