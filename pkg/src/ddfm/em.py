"""Likelihood rectification via hierarchical-Bayes EM and half-quadratic splitting.

The fusion residual model treats x = f - v and y = i - v as Laplacian:
y - x and x are Gaussians whose per-pixel variances m, n are exponential
latents with scales gamma and rho.  The expectation step assigns the
reciprocal variances inverse-Gaussian posteriors

    1/m | y, x ~ InvGauss(mean = sqrt(2 (y-x)^2 / gamma), shape = 2/gamma),
    1/n | x    ~ InvGauss(mean = sqrt(2 x^2 / rho),       shape = 2/rho),

whose means become the weights of a reweighted least-squares surrogate;
weights grow with the magnitude of the quantity they gate, which keeps
the adaptive scale updates stable and yields proportional blending of
the sources.  The maximization step splits off u = grad(k), k = x and
solves the three quadratic subproblems in closed form (the k update by
FFT under the periodic boundary).  One E + one M pass per diffusion
step suffices; the EM-only fusion mode repeats the pass many times.
Every subproblem is solved exactly in closed form, so the pass carries
no tunable update step size.

All updates act per channel with the scalar (gamma, rho) shared across
channels, which couples channels only through the hyperparameters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError, ShapeError
from .tensor import as_image, broadcast_ir, grad, require_same_shape


@dataclass(frozen=True)
class EmParams:
    """Weights of the rectification objective.

    psi is the texture-preservation weight on ||grad x||^2, eta the
    half-quadratic splitting weight, epsilon_clamp the lower bound that
    keeps the inverse-Gaussian posteriors proper when a residual hits
    zero.  fixed_phi, when set, bypasses the adaptive expectation step
    and uses constant weights (data weight 1, shrinkage weight phi).
    """

    psi: float = 0.5
    eta: float = 0.1
    epsilon_clamp: float = 1e-6
    fixed_phi: float | None = None

    def __post_init__(self):
        if self.psi < 0.0:
            raise ParameterError(f"psi must be >= 0, got {self.psi}")
        if self.eta <= 0.0:
            raise ParameterError(f"eta must be > 0, got {self.eta}")
        if self.epsilon_clamp <= 0.0:
            raise ParameterError(f"epsilon_clamp must be > 0, got {self.epsilon_clamp}")
        if self.fixed_phi is not None and self.fixed_phi < 0.0:
            raise ParameterError(f"fixed_phi must be >= 0, got {self.fixed_phi}")


@dataclass
class EmState:
    """Variables carried across rectification passes within one run."""

    x: np.ndarray
    y: np.ndarray
    m_bar: np.ndarray
    n_bar: np.ndarray
    k: np.ndarray
    u: np.ndarray
    gamma: float = 1.0
    rho: float = 1.0


def initial_state(height: int, width: int, channels: int) -> EmState:
    """Scale-free start: unit hyperparameters, zero auxiliaries."""
    shape = (height, width, channels)
    zeros = np.zeros(shape)
    return EmState(
        x=zeros.copy(),
        y=zeros.copy(),
        m_bar=zeros.copy(),
        n_bar=zeros.copy(),
        k=zeros.copy(),
        u=np.zeros((2,) + shape),
        gamma=1.0,
        rho=1.0,
    )


def e_step(
    x: np.ndarray,
    y: np.ndarray,
    gamma: float,
    rho: float,
    epsilon_clamp: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior expectations of the reciprocal latent variances.

    m_bar = E[1/m | y, x] = sqrt(2 (y - x)^2 / gamma) and
    n_bar = E[1/n | x] = sqrt(2 x^2 / rho), the mean parameters of the
    inverse-Gaussian posteriors.  |y - x| and |x| are clamped below by
    epsilon_clamp: a zero residual would put the posterior mean at zero,
    which leaves the distribution improper; the clamp's effect vanishes
    for every non-degenerate pixel.
    """
    x = as_image(x)
    y = as_image(y)
    require_same_shape(x, y, "x and y")
    if gamma <= 0.0 or rho <= 0.0:
        raise ParameterError(f"gamma and rho must be positive, got ({gamma}, {rho})")
    resid = np.maximum(np.abs(y - x), epsilon_clamp)
    mag = np.maximum(np.abs(x), epsilon_clamp)
    m_bar = np.sqrt(2.0 / gamma) * resid
    n_bar = np.sqrt(2.0 / rho) * mag
    return m_bar, n_bar


def update_hyperparams(
    m_bar: np.ndarray,
    n_bar: np.ndarray,
    gamma: float,
    rho: float,
    epsilon_clamp: float = 1e-6,
) -> tuple[float, float]:
    """Refresh the Laplacian scales from the latent-variance posteriors.

    gamma' and rho' are the means over pixels of E[m] and E[n].  For
    Z ~ InvGauss(mu, lam) the reciprocal moment is E[1/Z] = 1/mu + 1/lam;
    with 1/m ~ InvGauss(m_bar, 2/gamma) this gives
    E[m] = 1/m_bar + gamma/2, and analogously for n.
    """
    if gamma <= 0.0 or rho <= 0.0:
        raise ParameterError(f"gamma and rho must be positive, got ({gamma}, {rho})")
    e_m = 1.0 / np.maximum(m_bar, epsilon_clamp) + gamma / 2.0
    e_n = 1.0 / np.maximum(n_bar, epsilon_clamp) + rho / 2.0
    return float(e_m.mean()), float(e_n.mean())


def _difference_transfer(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Real-FFT transfer functions of the two periodic forward-difference kernels.

    Accumulated (+=) so a length-1 axis collapses to the zero operator,
    matching the wrap-around difference on that axis.
    """
    kernel_h = np.zeros((height, width))
    kernel_h[0, 0] += -1.0
    kernel_h[0, width - 1] += 1.0
    kernel_v = np.zeros((height, width))
    kernel_v[0, 0] += -1.0
    kernel_v[height - 1, 0] += 1.0
    return np.fft.rfft2(kernel_h), np.fft.rfft2(kernel_v)


def update_k(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Exact minimizer of ||k - x||^2 + ||u - grad(k)||^2.

    The normal equations (I + grad^T grad) k = x + grad^T u are diagonal
    in the Fourier basis under the periodic boundary, so each channel is
    solved with one forward and one inverse real 2-D transform:
    numerator fft(x) + conj(D) . fft(u), denominator 1 + |D_h|^2 + |D_v|^2.
    """
    x = as_image(x)
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (2,) + x.shape:
        raise ShapeError(f"gradient field shape {u.shape} does not match image {x.shape}")
    h, w, c = x.shape
    d_h, d_v = _difference_transfer(h, w)
    denom = 1.0 + np.abs(d_h) ** 2 + np.abs(d_v) ** 2
    out = np.empty_like(x)
    for ch in range(c):
        numer = (
            np.fft.rfft2(x[:, :, ch])
            + np.conj(d_h) * np.fft.rfft2(u[0, :, :, ch])
            + np.conj(d_v) * np.fft.rfft2(u[1, :, :, ch])
        )
        out[:, :, ch] = np.fft.irfft2(numer / denom, s=(h, w))
    return out


def update_u(k: np.ndarray, params: EmParams) -> np.ndarray:
    """Exact minimizer of psi ||u||^2 + eta/2 ||u - grad(k)||^2:
    a scalar shrinkage u = eta / (2 psi + eta) * grad(k).
    """
    return (params.eta / (2.0 * params.psi + params.eta)) * grad(k)


def update_x(
    m_bar: np.ndarray,
    n_bar: np.ndarray,
    y: np.ndarray,
    k: np.ndarray,
    params: EmParams,
) -> np.ndarray:
    """Exact minimizer of the weighted least-squares subproblem:

        x = (2 m_bar . y + eta k) / (2 m_bar + 2 n_bar + eta),

    element-wise; the denominator is at least eta > 0.
    """
    m_bar = np.asarray(m_bar, dtype=np.float64)
    n_bar = np.asarray(n_bar, dtype=np.float64)
    if m_bar.min() < 0.0 or n_bar.min() < 0.0:
        raise ParameterError("m_bar and n_bar must be non-negative")
    return (2.0 * m_bar * y + params.eta * k) / (2.0 * m_bar + 2.0 * n_bar + params.eta)


def q_objective(x, y, m_bar, n_bar, psi: float) -> float:
    """Weighted surrogate loss sum(m_bar (x-y)^2) + sum(n_bar x^2) + psi ||grad x||^2."""
    x = as_image(x)
    y = as_image(y)
    require_same_shape(x, y, "x and y")
    data = float(np.sum(m_bar * (x - y) ** 2))
    shrink = float(np.sum(n_bar * x**2))
    tv = float(psi * np.sum(grad(x) ** 2))
    return data + shrink + tv


def lx_objective(x, y, k, m_bar, n_bar, eta: float) -> float:
    """Least-squares subproblem value sum(m_bar (x-y)^2) + sum(n_bar x^2) + eta/2 ||k-x||^2."""
    return float(
        np.sum(m_bar * (x - y) ** 2)
        + np.sum(n_bar * x**2)
        + eta / 2.0 * np.sum((k - x) ** 2)
    )


def splitting_objective(x, u, k, y, m_bar, n_bar, params: EmParams) -> float:
    """Full half-quadratic objective over (x, u, k); each coordinate update
    of the M-step pass can only decrease it."""
    return float(
        np.sum(m_bar * (x - y) ** 2)
        + np.sum(n_bar * x**2)
        + params.psi * np.sum(u**2)
        + params.eta / 2.0 * (np.sum((u - grad(k)) ** 2) + np.sum((k - x) ** 2))
    )


def em_rectify(
    f0_tilde: np.ndarray,
    ir: np.ndarray,
    vis: np.ndarray,
    state: EmState,
    params: EmParams,
) -> tuple[np.ndarray, EmState]:
    """One expectation + one maximization pass on the clean-image estimate.

    Substitutes x = f0_tilde - vis, y = ir - vis, refreshes the latent
    expectations and hyperparameters, runs the (k, u, x) coordinate pass,
    and returns the rectified estimate x + vis together with the state
    (gamma, rho, u, k) to carry into the next pass.  With fixed_phi set,
    the expectation step is bypassed in favor of constant weights.
    """
    f0_tilde = as_image(f0_tilde)
    vis = as_image(vis)
    require_same_shape(f0_tilde, vis, "f0_tilde and vis")
    ir = as_image(ir)
    if ir.shape[2] == 1 and vis.shape[2] != 1:
        ir = broadcast_ir(ir, vis.shape[2])
    require_same_shape(ir, vis, "ir (after broadcast) and vis")

    x_tilde = f0_tilde - vis
    y = ir - vis

    if params.fixed_phi is not None:
        m_bar = np.ones_like(x_tilde)
        n_bar = np.full_like(x_tilde, params.fixed_phi)
        gamma, rho = state.gamma, state.rho
    else:
        m_bar, n_bar = e_step(x_tilde, y, state.gamma, state.rho, params.epsilon_clamp)
        gamma, rho = update_hyperparams(
            m_bar, n_bar, state.gamma, state.rho, params.epsilon_clamp
        )

    k = update_k(x_tilde, state.u)
    u = update_u(k, params)
    x = update_x(m_bar, n_bar, y, k, params)

    new_state = replace(
        state, x=x, y=y, m_bar=m_bar, n_bar=n_bar, k=k, u=u, gamma=gamma, rho=rho
    )
    return x + vis, new_state
