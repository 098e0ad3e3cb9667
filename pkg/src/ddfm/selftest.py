"""Built-in numerical oracles, runnable from the command line.

Each oracle re-derives a quantity the engine computes in closed form by
an independent route (Monte-Carlo sampling, dense linear algebra, or a
direct inequality) and fails loudly on disagreement.  The quick profile
trades sample counts for a wall-clock budget of a few seconds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import invgauss

from . import em as em_mod
from .pipeline import FusionConfig, ddfm_fuse, parse_loss_trace
from .tensor import div, grad


@dataclass
class OracleResult:
    name: str
    passed: bool
    detail: str


def _sample_inverse_gaussian(mean: float, shape_param: float, count: int, rng) -> np.ndarray:
    # scipy's invgauss(mu, scale) has mean mu * scale and shape parameter scale.
    return invgauss.rvs(mu=mean / shape_param, scale=shape_param, size=count, random_state=rng)


def estep_monte_carlo(cases: int = 10, samples: int = 1_000_000, rtol: float = 0.01) -> OracleResult:
    """Closed-form expectation of the reciprocal latent variances versus
    Monte-Carlo means of their inverse-Gaussian posteriors."""
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(cases):
        x = rng.uniform(-1.0, 1.0, size=(1, 1, 1))
        y = x + np.sign(rng.standard_normal()) * rng.uniform(0.05, 1.0)
        gamma = rng.uniform(0.2, 2.0)
        rho = rng.uniform(0.2, 2.0)
        x_safe = x if abs(x[0, 0, 0]) > 0.05 else x + 0.1
        m_bar, n_bar = em_mod.e_step(x_safe, y, gamma, rho)
        mc_m = _sample_inverse_gaussian(m_bar[0, 0, 0], 2.0 / gamma, samples, rng).mean()
        mc_n = _sample_inverse_gaussian(n_bar[0, 0, 0], 2.0 / rho, samples, rng).mean()
        worst = max(
            worst,
            abs(mc_m - m_bar[0, 0, 0]) / m_bar[0, 0, 0],
            abs(mc_n - n_bar[0, 0, 0]) / n_bar[0, 0, 0],
        )
    return OracleResult(
        "e-step Monte-Carlo",
        worst <= rtol,
        f"worst relative error {worst:.2e} (tolerance {rtol:.0e})",
    )


def dense_gradient_matrix(height: int, width: int) -> np.ndarray:
    """The forward-difference operator as an explicit (2 H W, H W) matrix."""
    n = height * width
    rows = []
    for comp in range(2):
        block = np.zeros((n, n))
        for idx in range(n):
            basis = np.zeros((height, width, 1))
            basis[idx // width, idx % width, 0] = 1.0
            block[:, idx] = grad(basis)[comp, :, :, 0].ravel()
        rows.append(block)
    return np.vstack(rows)


def k_solver_dense_check(size: int = 8, tol: float = 1e-8) -> OracleResult:
    """FFT deconvolution against a dense (I + G^T G) solve."""
    rng = np.random.default_rng(7)
    g_mat = dense_gradient_matrix(size, size)
    normal = np.eye(size * size) + g_mat.T @ g_mat
    worst = 0.0
    for _ in range(5):
        x = rng.standard_normal((size, size, 1))
        u = rng.standard_normal((2, size, size, 1))
        k_fft = em_mod.update_k(x, u)
        rhs = x.ravel() + g_mat.T @ np.concatenate([u[0].ravel(), u[1].ravel()])
        k_dense = np.linalg.solve(normal, rhs).reshape(size, size, 1)
        worst = max(worst, float(np.abs(k_fft - k_dense).max()))
    return OracleResult(
        "k-update dense solve",
        worst <= tol,
        f"worst deviation {worst:.2e} (tolerance {tol:.0e})",
    )


def stationarity_check(size: int = 8, tol: float = 1e-8) -> OracleResult:
    """Each closed-form update must zero the gradient of its own subproblem."""
    rng = np.random.default_rng(5)
    params = em_mod.EmParams(psi=0.5, eta=0.1)
    worst = 0.0
    for _ in range(10):
        x = rng.standard_normal((size, size, 1))
        y = rng.standard_normal((size, size, 1))
        u = rng.standard_normal((2, size, size, 1)) * 0.5
        m_bar, n_bar = em_mod.e_step(x, y, 1.0, 1.0)
        k = em_mod.update_k(x, u)
        res_k = 2.0 * (k - x) - 2.0 * div(grad(k) - u)
        u_new = em_mod.update_u(k, params)
        res_u = 2.0 * params.psi * u_new + params.eta * (u_new - grad(k))
        x_new = em_mod.update_x(m_bar, n_bar, y, k, params)
        res_x = 2.0 * m_bar * (x_new - y) + 2.0 * n_bar * x_new + params.eta * (x_new - k)
        worst = max(
            worst,
            float(np.abs(res_k).max()),
            float(np.abs(res_u).max()),
            float(np.abs(res_x).max()),
        )
    return OracleResult(
        "closed-form stationarity",
        worst <= tol,
        f"worst first-order residual {worst:.2e} (tolerance {tol:.0e})",
    )


def rectification_descent(steps: int = 25, size: int = 16) -> OracleResult:
    """On a real run: the rectified estimate never increases the
    least-squares loss, and every (k, u, x) pass decreases the full
    splitting objective for its frozen weights."""
    rng = np.random.default_rng(11)
    ir = rng.uniform(0, 255, (size, size, 1))
    vis = rng.uniform(0, 255, (size, size, 3))
    config = FusionConfig(mode="ddfm", steps=steps, seed=3, var0=0.5)
    fused, manifest = ddfm_fuse(ir, vis, config)
    rows = parse_loss_trace(manifest)
    descent_ok = all(after <= before + 1e-9 * max(1.0, abs(before)) for before, after, _ in rows)

    params = em_mod.EmParams(psi=0.5, eta=0.1)
    mono_ok = True
    worst_gap = 0.0
    for _ in range(20):
        x = rng.standard_normal((size, size, 1))
        y = rng.standard_normal((size, size, 1))
        u = rng.standard_normal((2, size, size, 1)) * 0.3
        m_bar, n_bar = em_mod.e_step(x, y, 1.0, 1.0)
        before = em_mod.splitting_objective(x, u, x, y, m_bar, n_bar, params)
        k = em_mod.update_k(x, u)
        u_new = em_mod.update_u(k, params)
        x_new = em_mod.update_x(m_bar, n_bar, y, k, params)
        after = em_mod.splitting_objective(x_new, u_new, k, y, m_bar, n_bar, params)
        worst_gap = max(worst_gap, after - before)
        if after > before + 1e-9 * max(1.0, abs(before)):
            mono_ok = False
    detail = f"trace rows {len(rows)}, worst pass increase {worst_gap:.2e}"
    return OracleResult("rectification descent", descent_ok and mono_ok, detail)


def run_all(quick: bool = False) -> list[OracleResult]:
    if quick:
        return [
            estep_monte_carlo(cases=4, samples=200_000, rtol=0.02),
            k_solver_dense_check(),
            stationarity_check(),
            rectification_descent(steps=8, size=12),
        ]
    return [
        estep_monte_carlo(),
        k_solver_dense_check(),
        stationarity_check(),
        rectification_descent(),
    ]
