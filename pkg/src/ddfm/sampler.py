"""Unconditional reverse-diffusion primitives.

One chain is sequential in t; all randomness is drawn from a single
PCG64 stream seeded with one integer, in a fixed order: first the
initial noise image, then one standard-normal image per step whose
sigma_tilde is positive.  Runs are therefore bit-reproducible from
(seed, config).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeError
from .schedule import NoiseSchedule
from .score import ScoreModel
from .tensor import as_image, require_same_shape


@dataclass
class SamplerState:
    t: int
    f_t: np.ndarray
    rng: np.random.Generator


def make_rng(seed: int) -> np.random.Generator:
    """The engine's named random stream: PCG64 seeded from one u64."""
    return np.random.Generator(np.random.PCG64(seed))


def predict_x0(f_t: np.ndarray, score: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Denoised estimate of the clean image from the score at step t:
    (f_t + (1 - abar_t) * score) / sqrt(abar_t).
    """
    f_t = as_image(f_t)
    score = as_image(score)
    require_same_shape(f_t, score, "f_t and score")
    if t < 1 or t > schedule.steps:
        raise ParameterError(f"step {t} outside [1, {schedule.steps}]")
    if not np.all(np.isfinite(score)):
        raise NumericError("score contains non-finite values")
    abar = schedule.alpha_bar_at(t)
    out = (f_t + (1.0 - abar) * score) / np.sqrt(abar)
    if not np.all(np.isfinite(out)):
        raise NumericError("clean-image prediction overflowed")
    return out


def reverse_step(
    f_t: np.ndarray,
    f0_hat: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    z: np.ndarray | None = None,
) -> np.ndarray:
    """One reverse update from step t to t - 1:

        f_{t-1} = sqrt(alpha_t) (1 - abar_{t-1}) / (1 - abar_t) * f_t
                + sqrt(abar_{t-1}) beta_t / (1 - abar_t) * f0_hat
                + sigma_tilde_t * z

    With abar_0 = 1 the t = 1 step returns f0_hat exactly.  ``z`` is
    ignored when sigma_tilde_t = 0 and required otherwise.
    """
    f_t = as_image(f_t)
    f0_hat = as_image(f0_hat)
    require_same_shape(f_t, f0_hat, "f_t and f0_hat")
    if t < 1 or t > schedule.steps:
        raise ParameterError(f"step {t} outside [1, {schedule.steps}]")
    abar_t = schedule.alpha_bar_at(t)
    abar_prev = schedule.alpha_bar_at(t - 1)
    beta_t = float(schedule.beta[t - 1])
    alpha_t = float(schedule.alpha[t - 1])
    denom = 1.0 - abar_t
    if denom <= 0.0 or abar_prev >= 1.0:
        # Terminal step (abar_{t-1} = 1): both coefficients reduce to (0, 1)
        # exactly, so return the clean estimate without float round-off.
        # Also covers degenerate all-zero-beta test schedules.
        out = f0_hat.copy()
    else:
        coef_t = np.sqrt(alpha_t) * (1.0 - abar_prev) / denom
        coef_0 = np.sqrt(abar_prev) * beta_t / denom
        out = coef_t * f_t + coef_0 * f0_hat
    sigma = float(schedule.sigma_tilde[t - 1])
    if sigma > 0.0:
        if z is None:
            raise ParameterError("sigma_tilde > 0 requires a noise draw z")
        z = as_image(z)
        require_same_shape(f_t, z, "f_t and z")
        out = out + sigma * z
    if not np.all(np.isfinite(out)):
        raise NumericError("reverse step produced non-finite values")
    return out


def sample_unconditional(
    score_model: ScoreModel,
    schedule: NoiseSchedule,
    seed: int,
    shape: tuple[int, int, int],
) -> np.ndarray:
    """Run the full reverse chain from pure noise; deterministic given seed."""
    if len(shape) != 3:
        raise ShapeError(f"shape must be (H, W, C), got {shape}")
    rng = make_rng(seed)
    f = rng.standard_normal(shape)
    for t in range(schedule.steps, 0, -1):
        s = score_model.evaluate(f, t, schedule)
        f0 = predict_x0(f, s, t, schedule)
        z = rng.standard_normal(shape) if schedule.sigma_tilde[t - 1] > 0.0 else None
        f = reverse_step(f, f0, t, schedule, z)
    return f
