"""Acceptance suite: one test per release criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
PASS lines.  Every tolerance is pinned here; nothing is deferred to later
calibration.
"""

import time

import numpy as np
from scipy.optimize import minimize
from scipy.stats import invgauss

from ddfm import (
    AnalyticGaussianScore,
    EmParams,
    FusionConfig,
    broadcast_ir,
    build_linear_schedule,
    ddfm_fuse,
    e_step,
    entropy,
    evaluate_fusion,
    fuse,
    grad,
    lx_objective,
    mean_report,
    mutual_info,
    normalize,
    parse_loss_trace,
    sample_unconditional,
    ssim_fusion,
    update_hyperparams,
    update_k,
    update_u,
    update_x,
)
from ddfm.metrics import METRIC_NAMES
from ddfm.tensor import div
from oracles import dense_grad_matrix, field_to_vec, mi_exhaustive


def _sample_ig(mean, shape_param, count, rng):
    return invgauss.rvs(mu=mean / shape_param, scale=shape_param, size=count, random_state=rng)


def test_acceptance_e_step_oracle():
    """Expectation-step values within 1% of 1e6-sample Monte-Carlo means of the
    inverse-Gaussian posteriors, over 50 random (x, y, gamma, rho); < 60 s."""
    start = time.monotonic()
    rng = np.random.default_rng(20240501)
    worst = 0.0
    for _ in range(50):
        x = rng.uniform(-1.0, 1.0, (1, 1, 1))
        if abs(x[0, 0, 0]) < 0.05:
            x = x + 0.1
        y = x + rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 1.0)
        gamma = rng.uniform(0.2, 2.0)
        rho = rng.uniform(0.2, 2.0)
        m_bar, n_bar = e_step(x, y, gamma, rho)
        mc_m = _sample_ig(m_bar[0, 0, 0], 2.0 / gamma, 1_000_000, rng).mean()
        mc_n = _sample_ig(n_bar[0, 0, 0], 2.0 / rho, 1_000_000, rng).mean()
        worst = max(
            worst,
            abs(mc_m - m_bar[0, 0, 0]) / m_bar[0, 0, 0],
            abs(mc_n - n_bar[0, 0, 0]) / n_bar[0, 0, 0],
        )
    elapsed = time.monotonic() - start
    assert worst <= 0.01, f"worst relative error {worst}"
    assert elapsed < 60.0, f"runtime {elapsed:.1f} s"
    print(f"PASS: E-step oracle (worst rel err {worst:.2e}, {elapsed:.1f} s)")


def test_acceptance_m_step_optimality():
    """First-order residuals of the three closed-form updates <= 1e-8; the
    deconvolution update matches a dense solve on 8x8 to 1e-8; the
    least-squares update is within 1e-10 objective of a numerical minimizer."""
    rng = np.random.default_rng(7)
    params = EmParams(psi=0.5, eta=0.1)
    g_mat = dense_grad_matrix(8, 8)
    normal_mat = np.eye(64) + g_mat.T @ g_mat
    worst_foc = 0.0
    worst_dense = 0.0
    worst_gap = 0.0
    for _ in range(10):
        x = rng.standard_normal((8, 8, 1))
        y = rng.standard_normal((8, 8, 1))
        u = rng.standard_normal((2, 8, 8, 1)) * 0.5
        m_bar, n_bar = e_step(x, y, 1.0, 1.0)

        k = update_k(x, u)
        res_k = 2 * (k - x) - 2 * div(grad(k) - u)
        u_new = update_u(k, params)
        res_u = 2 * params.psi * u_new + params.eta * (u_new - grad(k))
        x_new = update_x(m_bar, n_bar, y, k, params)
        res_x = 2 * m_bar * (x_new - y) + 2 * n_bar * x_new + params.eta * (x_new - k)
        worst_foc = max(
            worst_foc,
            np.abs(res_k).max(),
            np.abs(res_u).max(),
            np.abs(res_x).max(),
        )

        k_dense = np.linalg.solve(normal_mat, x.ravel() + g_mat.T @ field_to_vec(u))
        worst_dense = max(worst_dense, np.abs(k.ravel() - k_dense).max())

        def objective(flat):
            return lx_objective(flat.reshape(8, 8, 1), y, k, m_bar, n_bar, params.eta)

        res = minimize(objective, np.zeros(64), method="L-BFGS-B", tol=1e-15)
        worst_gap = max(worst_gap, objective(x_new.ravel()) - res.fun)
    assert worst_foc <= 1e-8, f"first-order residual {worst_foc}"
    assert worst_dense <= 1e-8, f"dense-solve deviation {worst_dense}"
    assert worst_gap <= 1e-10, f"objective gap {worst_gap}"
    print(
        "PASS: M-step optimality "
        f"(FOC {worst_foc:.2e}, dense {worst_dense:.2e}, gap {worst_gap:.2e})"
    )


def test_acceptance_em_vs_brute_force():
    """Converged EM on 2-pixel problems matches grid minimization of the
    frozen-expectation negative log-likelihood within the grid step of 1e-3,
    over 20 random instances."""
    rng = np.random.default_rng(123)
    step = 1e-3
    eta = 0.1
    worst = 0.0
    for _ in range(20):
        y = np.zeros((1, 2, 1))
        y[0, 0, 0] = rng.uniform(0.2, 1.2) * rng.choice([-1.0, 1.0])
        y[0, 1, 0] = rng.uniform(0.2, 1.2) * rng.choice([-1.0, 1.0])
        psi = rng.uniform(0.1, 0.5)
        params = EmParams(psi=psi, eta=eta)

        u = np.zeros((2, 1, 2, 1))
        x = np.zeros((1, 2, 1))
        gamma = rho = 1.0
        for _ in range(20000):
            m_bar, n_bar = e_step(x, y, gamma, rho)
            gamma2, rho2 = update_hyperparams(m_bar, n_bar, gamma, rho)
            k = update_k(x, u)
            u = update_u(k, params)
            x_new = update_x(m_bar, n_bar, y, k, params)
            done = (
                np.abs(x_new - x).max() < 1e-13
                and abs(gamma2 - gamma) + abs(rho2 - rho) < 1e-13
            )
            x, gamma, rho = x_new, gamma2, rho2
            if done:
                break
        m_bar, n_bar = e_step(x, y, gamma, rho)

        lo = min(0.0, float(y.min())) - 0.05
        hi = max(0.0, float(y.max())) + 0.05
        xs = step * np.arange(round(lo / step), round(hi / step) + 1)
        x1, x2 = np.meshgrid(xs, xs, indexing="ij")
        psi_eff = psi * eta / (2 * psi + eta)
        d = (x2 - x1) / np.sqrt(2.0)
        kd = eta * d / (8 * psi_eff + eta)
        tv = psi_eff * 4 * kd**2 + eta / 2 * (kd - d) ** 2
        nll = (
            m_bar[0, 0, 0] * (x1 - y[0, 0, 0]) ** 2 / 2
            + m_bar[0, 1, 0] * (x2 - y[0, 1, 0]) ** 2 / 2
            + n_bar[0, 0, 0] * x1**2 / 2
            + n_bar[0, 1, 0] * x2**2 / 2
            + tv / 2
        )
        idx = np.unravel_index(np.argmin(nll), nll.shape)
        x_grid = np.array([x1[idx], x2[idx]])
        worst = max(worst, np.abs(np.array([x[0, 0, 0], x[0, 1, 0]]) - x_grid).max())
    assert worst <= step + 1e-9, f"worst deviation {worst}"
    print(f"PASS: EM vs brute force (worst deviation {worst:.2e} <= {step})")


def test_acceptance_rectification_descent_full_run():
    """Across a full fusion run (analytic score, 64x64 synthetic pair, 100
    steps) the rectified estimate's least-squares loss never exceeds the
    unrectified one; zero violations."""
    rng = np.random.default_rng(42)
    yy, xx = np.mgrid[0:64, 0:64] / 64.0
    vis = np.clip(
        np.stack(
            [
                120 + 80 * xx + 20 * np.sin(2 * np.pi * 3 * yy),
                110 + 70 * xx + 20 * np.sin(2 * np.pi * 3 * yy),
                100 + 60 * xx + 16 * np.sin(2 * np.pi * 3 * yy),
            ],
            axis=2,
        )
        + rng.normal(0, 4, (64, 64, 3)),
        0,
        255,
    )
    ir = np.clip(
        40
        + 180 * np.exp(-((yy - 0.4) ** 2 + (xx - 0.6) ** 2) / 0.02)
        + rng.normal(0, 4, (64, 64)),
        0,
        255,
    )[:, :, None]
    config = FusionConfig(mode="ddfm", steps=100, seed=5, var0=0.5)
    _, manifest = ddfm_fuse(ir, vis, config)
    rows = parse_loss_trace(manifest)
    assert len(rows) == 100
    violations = sum(
        1 for before, after, _ in rows if after > before + 1e-9 * max(1.0, abs(before))
    )
    assert violations == 0
    print(f"PASS: rectification descent over full run (100 steps, 0 violations)")


def test_acceptance_sampler_statistics():
    """Unconditional chains with the analytic Gaussian score: per-pixel mean
    within 3 standard errors of mu0 and mean per-pixel variance within 20%
    of var0, over 64 seeded 16x16 chains; < 2 min."""
    start = time.monotonic()
    mu0 = (
        0.3 * np.sin(np.linspace(0, 3 * np.pi, 16))[:, None]
        + 0.1 * np.cos(np.linspace(0, 2 * np.pi, 16))[None, :]
    )[:, :, None]
    var0 = 0.25
    model = AnalyticGaussianScore(mu0, var0)
    schedule = build_linear_schedule(1000, variance="posterior")
    outs = np.stack(
        [sample_unconditional(model, schedule, seed, (16, 16, 1)) for seed in range(100, 164)]
    )
    se = np.sqrt(var0 / 64)
    worst_mean = np.abs(outs.mean(axis=0) - mu0).max()
    var_ratio = outs.var(axis=0, ddof=1).mean() / var0
    elapsed = time.monotonic() - start
    assert worst_mean <= 3 * se, f"worst per-pixel mean deviation {worst_mean} vs 3 SE {3 * se}"
    assert abs(var_ratio - 1.0) <= 0.2, f"variance ratio {var_ratio}"
    assert elapsed < 120.0, f"runtime {elapsed:.1f} s"
    print(
        "PASS: sampler statistics "
        f"(mean dev {worst_mean:.3f} <= {3 * se:.3f}, var ratio {var_ratio:.3f}, {elapsed:.0f} s)"
    )


def test_acceptance_determinism():
    """(inputs, config, seed) reproduce the fused image and manifest bit-exactly."""
    rng = np.random.default_rng(77)
    ir = rng.uniform(0, 255, (24, 24, 1))
    vis = rng.uniform(0, 255, (24, 24, 3))
    config = FusionConfig(mode="ddfm", steps=30, seed=13, var0=0.5)
    fused_a, manifest_a = ddfm_fuse(ir, vis, config)
    fused_b, manifest_b = ddfm_fuse(ir, vis, config)
    assert fused_a.tobytes() == fused_b.tobytes()
    assert manifest_a.to_text() == manifest_b.to_text()
    print("PASS: determinism (bit-exact image and manifest)")


def _ablation_pair(seed, size=48):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = 100 + 60 * xx + 22 * np.sin(2 * np.pi * (2.0 * yy + rng.uniform()))
    tex = 14 * np.sin(2 * np.pi * (xx * 8 + rng.uniform())) * np.cos(
        2 * np.pi * (yy * 7 + rng.uniform())
    )
    edges = 25 * np.sign(np.sin(2 * np.pi * (3 * xx + rng.uniform())))
    vis = np.stack(
        [
            base + tex + edges + rng.uniform(-8, 8),
            base * 0.96 + tex + edges + rng.uniform(-8, 8),
            base * 0.92 + 0.8 * tex + 0.9 * edges + rng.uniform(-8, 8),
        ],
        axis=2,
    )
    vis = np.clip(vis, 0, 255)
    luma = vis @ np.array([0.299, 0.587, 0.114])
    ir = luma.copy()
    for _ in range(7):
        cy, cx = rng.uniform(0.1, 0.9, 2)
        s = rng.uniform(0.06, 0.18)
        ir = ir + rng.uniform(60, 150) * np.exp(
            -((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s)
        )
    return np.clip(ir, 0, 255)[:, :, None], vis


def _ablation_prior(ir, vis, seed, junk_amp=0.1):
    rng = np.random.default_rng(seed + 777)
    size = ir.shape[0]
    ii, jj = np.mgrid[0:size, 0:size]
    phase = rng.uniform(0, 2 * np.pi)
    junk = (
        junk_amp
        * np.sin(2 * np.pi * (ii + jj) / 6 + phase)[:, :, None]
        * rng.uniform(0.7, 1.0, (size, size, 1))
    )
    clean = np.maximum(broadcast_ir(normalize(ir), 3), normalize(vis))
    return np.clip(clean + junk, -1, 1)


def test_acceptance_ablation_ordering():
    """On a 10-pair synthetic corpus with the analytic score, the full mode's
    metric means beat (or tie) both the EM-only and no-TV ablations on at
    least 4 of the 6 metrics; direction check only."""
    reports = {"ddfm": [], "em_only": [], "no_tv": []}
    stride = 60
    steps_eff = len(range(1000, 0, -stride))
    for seed in range(10):
        ir, vis = _ablation_pair(seed)
        mu0 = _ablation_prior(ir, vis, seed)
        for mode in reports:
            config = FusionConfig(
                mode=mode,
                steps=1000,
                stride=stride,
                em_iters=steps_eff,
                seed=seed,
                mu0=mu0,
                var0=0.4,
                psi=0.5,
                eta=1.0,
                sampler_variance="zero",
            )
            fused, _ = fuse(ir, vis, config)
            reports[mode].append(evaluate_fusion(fused, ir, vis))
    means = {m: np.array(mean_report(r).as_tuple()) for m, r in reports.items()}
    wins_em = [n for n, a, b in zip(METRIC_NAMES, means["ddfm"], means["em_only"]) if a >= b]
    wins_tv = [n for n, a, b in zip(METRIC_NAMES, means["ddfm"], means["no_tv"]) if a >= b]
    assert len(wins_em) >= 4, f"full mode beats em_only only on {wins_em}"
    assert len(wins_tv) >= 4, f"full mode beats no_tv only on {wins_tv}"
    print(f"PASS: ablation ordering (vs em_only on {wins_em}; vs no_tv on {wins_tv})")


def test_acceptance_metrics_endpoints():
    """Entropy hits 0/1/8 exactly on the three canonical histograms,
    self-SSIM is exactly 1, and the MI plug-in matches exhaustive summation
    on 4x4 integer images to 1e-12."""
    assert entropy(np.full((16, 16, 1), 7.0)) == 0.0
    two = (np.arange(256).reshape(16, 16, 1) % 2) * 255.0
    assert entropy(two) == 1.0
    assert entropy(np.arange(256.0).reshape(16, 16, 1)) == 8.0

    rng = np.random.default_rng(3)
    img = rng.uniform(0, 255, (24, 24, 1))
    assert ssim_fusion(img, img, img) == 1.0

    f = np.floor(rng.uniform(0, 6, (4, 4, 1)))
    a = np.floor(rng.uniform(0, 6, (4, 4, 1)))
    b = np.floor(rng.uniform(0, 6, (4, 4, 1)))
    expected = mi_exhaustive(
        f[:, :, 0].astype(np.uint8), a[:, :, 0].astype(np.uint8)
    ) + mi_exhaustive(f[:, :, 0].astype(np.uint8), b[:, :, 0].astype(np.uint8))
    assert abs(mutual_info(f, a, b) - expected) <= 1e-12
    print("PASS: metrics endpoints (entropy 0/1/8, SSIM(x,x)=1, MI plug-in exact)")
