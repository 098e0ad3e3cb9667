"""Independent reference implementations used as test oracles.

Everything here is deliberately written without calling into the package
internals it checks: dense matrices are built from explicit index
arithmetic, metric references are scalar loops, and high-precision
evaluations use mpmath.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np
from scipy.signal import convolve2d


def dense_grad_matrix(height: int, width: int) -> np.ndarray:
    """Periodic forward-difference operator as a (2 H W, H W) matrix,
    rows ordered horizontal block then vertical block."""
    n = height * width
    mat = np.zeros((2 * n, n))
    for i in range(height):
        for j in range(width):
            row = i * width + j
            mat[row, i * width + (j + 1) % width] += 1.0
            mat[row, i * width + j] -= 1.0
            mat[n + row, ((i + 1) % height) * width + j] += 1.0
            mat[n + row, i * width + j] -= 1.0
    return mat


def field_to_vec(field: np.ndarray) -> np.ndarray:
    """Flatten a single-channel (2, H, W, 1) field to match dense_grad_matrix rows."""
    return np.concatenate([field[0, :, :, 0].ravel(), field[1, :, :, 0].ravel()])


def mp_reverse_step(f_t, f0_hat, betas, t, dps: int = 60) -> np.ndarray:
    """Arbitrary-precision evaluation of the deterministic reverse update."""
    with mpmath.workdps(dps):
        beta = [mpmath.mpf(b) for b in betas]
        alpha = [1 - b for b in beta]
        abar = []
        acc = mpmath.mpf(1)
        for a in alpha:
            acc *= a
            abar.append(acc)
        abar_t = abar[t - 1]
        abar_prev = abar[t - 2] if t >= 2 else mpmath.mpf(1)
        denom = 1 - abar_t
        coef_t = mpmath.sqrt(alpha[t - 1]) * (1 - abar_prev) / denom
        coef_0 = mpmath.sqrt(abar_prev) * beta[t - 1] / denom
        out = np.empty_like(f_t)
        flat_t = f_t.ravel()
        flat_0 = f0_hat.ravel()
        res = out.ravel()
        for idx in range(flat_t.size):
            res[idx] = float(coef_t * mpmath.mpf(flat_t[idx]) + coef_0 * mpmath.mpf(flat_0[idx]))
    return out


def mp_cumprod_last(betas, dps: int = 60) -> float:
    """High-precision cumulative product of (1 - beta)."""
    with mpmath.workdps(dps):
        acc = mpmath.mpf(1)
        for b in betas:
            acc *= 1 - mpmath.mpf(b)
        return float(acc)


def mp_weighted_loss(x, y, m_bar, n_bar, psi, dps: int = 60) -> float:
    """High-precision re-summation of the weighted surrogate loss, with the
    periodic-difference TV term computed by explicit wrap-around indexing."""
    with mpmath.workdps(dps):
        total = mpmath.mpf(0)
        h, w, c = x.shape
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    d = mpmath.mpf(x[i, j, ch]) - mpmath.mpf(y[i, j, ch])
                    total += mpmath.mpf(m_bar[i, j, ch]) * d * d
                    total += mpmath.mpf(n_bar[i, j, ch]) * mpmath.mpf(x[i, j, ch]) ** 2
                    dh = mpmath.mpf(x[i, (j + 1) % w, ch]) - mpmath.mpf(x[i, j, ch])
                    dv = mpmath.mpf(x[(i + 1) % h, j, ch]) - mpmath.mpf(x[i, j, ch])
                    total += mpmath.mpf(psi) * (dh * dh + dv * dv)
        return float(total)


# -- metric references ----------------------------------------------------------


def entropy_ref(gray_u8: np.ndarray) -> float:
    counts = {}
    for v in gray_u8.ravel():
        counts[int(v)] = counts.get(int(v), 0) + 1
    n = gray_u8.size
    total = 0.0
    for c in counts.values():
        p = c / n
        total -= p * math.log2(p)
    return total


def std_two_pass(gray: np.ndarray) -> float:
    vals = gray.ravel()
    mean = sum(float(v) for v in vals) / vals.size
    acc = sum((float(v) - mean) ** 2 for v in vals)
    return math.sqrt(acc / vals.size)


def mi_exhaustive(a_u8: np.ndarray, b_u8: np.ndarray) -> float:
    n = a_u8.size
    joint = {}
    pa = {}
    pb = {}
    for va, vb in zip(a_u8.ravel(), b_u8.ravel()):
        joint[(int(va), int(vb))] = joint.get((int(va), int(vb)), 0) + 1
        pa[int(va)] = pa.get(int(va), 0) + 1
        pb[int(vb)] = pb.get(int(vb), 0) + 1
    total = 0.0
    for (va, vb), c in joint.items():
        pj = c / n
        total += pj * math.log2(pj / ((pa[va] / n) * (pb[vb] / n)))
    return total


def vif_ref(ref: np.ndarray, dist: np.ndarray) -> float:
    """Loop-structured multi-scale pixel-domain VIF with the same scale
    policy as the package (skip scales whose window no longer fits)."""
    sigma_nsq = 2.0
    eps = 1e-10
    num = den = 0.0
    ref = ref.astype(np.float64).copy()
    dist = dist.astype(np.float64).copy()
    for scale in range(1, 5):
        size = 2 ** (4 - scale + 1) + 1
        sd = size / 5.0
        ax = np.arange(size) - (size - 1) / 2.0
        g1 = np.exp(-(ax**2) / (2 * sd * sd))
        win = np.outer(g1, g1)
        win = win / win.sum()
        if scale > 1:
            if min(ref.shape) < size:
                break
            ref = convolve2d(ref, win, mode="valid")[::2, ::2]
            dist = convolve2d(dist, win, mode="valid")[::2, ::2]
        if min(ref.shape) < size:
            break
        mu1 = convolve2d(ref, win, mode="valid")
        mu2 = convolve2d(dist, win, mode="valid")
        s1 = convolve2d(ref * ref, win, mode="valid") - mu1 * mu1
        s2 = convolve2d(dist * dist, win, mode="valid") - mu2 * mu2
        s12 = convolve2d(ref * dist, win, mode="valid") - mu1 * mu2
        for i in range(mu1.shape[0]):
            for j in range(mu1.shape[1]):
                v1 = max(s1[i, j], 0.0)
                v2 = max(s2[i, j], 0.0)
                c12 = s12[i, j]
                g = c12 / (v1 + eps)
                sv = v2 - g * c12
                if v1 < eps:
                    g, sv, v1 = 0.0, v2, 0.0
                if v2 < eps:
                    g, sv = 0.0, 0.0
                if g < 0:
                    sv, g = v2, 0.0
                sv = max(sv, eps)
                num += math.log10(1 + g * g * v1 / (sv + sigma_nsq))
                den += math.log10(1 + v1 / sigma_nsq)
    if den == 0.0:
        return 1.0
    val = num / den
    return 1.0 if not math.isfinite(val) else val


def qabf_ref(fused: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Scalar-loop edge-preservation score with the conventional constants."""
    sx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
    sy = np.array([[1, 2, 1], [0, 0, 0], [-1, -2, -1]], dtype=float)

    def strength_angle(img):
        gx = convolve2d(img, sx, mode="same", boundary="symm")
        gy = convolve2d(img, sy, mode="same", boundary="symm")
        g = np.sqrt(gx * gx + gy * gy)
        ang = np.where(gx == 0, math.pi / 2, np.arctan(np.divide(gy, gx, out=np.zeros_like(gy), where=gx != 0)))
        return g, ang

    g_a, t_a = strength_angle(a)
    g_b, t_b = strength_angle(b)
    g_f, t_f = strength_angle(fused)
    num = 0.0
    den = 0.0
    for i in range(fused.shape[0]):
        for j in range(fused.shape[1]):
            for g_s, t_s in ((g_a[i, j], t_a[i, j]), (g_b[i, j], t_b[i, j])):
                if g_s > g_f[i, j]:
                    rel = g_f[i, j] / g_s
                elif g_s == g_f[i, j]:
                    rel = g_f[i, j]
                else:
                    rel = g_s / g_f[i, j]
                rel_t = 1 - abs(t_s - t_f[i, j]) / (math.pi / 2)
                qg = 0.9994 / (1 + math.exp(-15.0 * (rel - 0.5)))
                qa = 0.9879 / (1 + math.exp(-22.0 * (rel_t - 0.8)))
                num += qg * qa * g_s
                den += g_s
    return 0.0 if den == 0.0 else num / den
