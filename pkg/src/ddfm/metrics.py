"""Fusion-quality metrics: EN, SD, MI, VIF, Qabf, SSIM.

All metrics operate on a grayscale view of [0, 255] images (ITU-R BT.601
luma for RGB).  Histogram metrics (EN, MI) quantize that view to uint8
with 256 bins and use base-2 logarithms, so EN is bounded by 8 bits.
Two-source aggregation: MI and VIF are sums over the two sources, SSIM
is the mean of the two pairwise values, Qabf uses its joint definition.

Constants, chosen to match the conventions prevalent in fusion
evaluation code:
  - SSIM: 11x11 Gaussian window, sigma 1.5, C1 = (0.01*255)^2,
    C2 = (0.03*255)^2, sample statistics over fully interior windows.
  - VIF: four pixel-domain scales, Gaussian windows of size
    2^(5-scale)+1 with sd = size/5, valid-mode filtering, downsampling
    by 2 between scales, sigma_nsq = 2; scales whose window no longer
    fits are skipped so small images remain measurable.
  - Qabf: Sobel edge strength/orientation with sigmoid constants
    Tg = 0.9994, kg = -15, Dg = 0.5, Ta = 0.9879, ka = -22, Da = 0.8.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import ShapeError
from .tensor import as_image

_LUMA = np.array([0.299, 0.587, 0.114])


def to_gray(img: np.ndarray) -> np.ndarray:
    """Grayscale view (H, W) in [0, 255]; BT.601 luma for 3-channel input."""
    arr = as_image(img)
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    if arr.shape[2] == 3:
        return arr @ _LUMA
    raise ShapeError(f"metrics expect 1- or 3-channel images, got {arr.shape[2]}")


def _quantize(gray: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8)


def entropy(img: np.ndarray) -> float:
    """Shannon entropy (bits) of the 256-bin histogram of the 8-bit view."""
    q = _quantize(to_gray(img))
    hist = np.bincount(q.ravel(), minlength=256).astype(np.float64)
    p = hist / hist.sum()
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)) + 0.0)


def std_dev(img: np.ndarray) -> float:
    """Population standard deviation of the grayscale view."""
    return float(to_gray(img).std())


def _mi_pair(a: np.ndarray, b: np.ndarray) -> float:
    joint = np.zeros((256, 256), dtype=np.float64)
    np.add.at(joint, (a.ravel(), b.ravel()), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    denom = np.outer(pa, pb)
    return float(np.sum(joint[nz] * np.log2(joint[nz] / denom[nz])))


def mutual_info(fused: np.ndarray, ir: np.ndarray, vis: np.ndarray) -> float:
    """MI(fused, ir) + MI(fused, vis) via the joint-histogram plug-in estimator."""
    f = _quantize(to_gray(fused))
    a = _quantize(to_gray(ir))
    b = _quantize(to_gray(vis))
    if f.shape != a.shape or f.shape != b.shape:
        raise ShapeError("mutual_info expects equal-shaped images")
    return _mi_pair(f, a) + _mi_pair(f, b)


# -- SSIM ---------------------------------------------------------------------


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def _ssim_pair(a: np.ndarray, b: np.ndarray, data_range: float = 255.0) -> float:
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ShapeError(f"SSIM needs at least 11x11 images, got {a.shape}")
    win = _gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    var_a = convolve2d(a * a, win, mode="valid") - mu_a**2
    var_b = convolve2d(b * b, win, mode="valid") - mu_b**2
    cov = convolve2d(a * b, win, mode="valid") - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(ssim_map.mean())


def ssim_fusion(fused: np.ndarray, ir: np.ndarray, vis: np.ndarray) -> float:
    """Mean of SSIM(fused, ir) and SSIM(fused, vis)."""
    f = to_gray(fused)
    a = to_gray(ir)
    b = to_gray(vis)
    if f.shape != a.shape or f.shape != b.shape:
        raise ShapeError("ssim_fusion expects equal-shaped images")
    return 0.5 * (_ssim_pair(f, a) + _ssim_pair(f, b))


# -- VIF ----------------------------------------------------------------------


def _vif_pair(ref: np.ndarray, dist: np.ndarray) -> float:
    sigma_nsq = 2.0
    eps = 1e-10
    num = 0.0
    den = 0.0
    any_scale = False
    for scale in range(1, 5):
        size = 2 ** (4 - scale + 1) + 1
        sd = size / 5.0
        half = (size - 1) / 2.0
        coords = np.arange(size) - half
        g = np.exp(-(coords**2) / (2.0 * sd * sd))
        win = np.outer(g, g)
        win /= win.sum()

        if scale > 1:
            if ref.shape[0] < size or ref.shape[1] < size:
                break
            ref = convolve2d(ref, win, mode="valid")[::2, ::2]
            dist = convolve2d(dist, win, mode="valid")[::2, ::2]
        if ref.shape[0] < size or ref.shape[1] < size:
            break
        any_scale = True

        mu1 = convolve2d(ref, win, mode="valid")
        mu2 = convolve2d(dist, win, mode="valid")
        mu1_sq, mu2_sq, mu1_mu2 = mu1 * mu1, mu2 * mu2, mu1 * mu2
        sigma1_sq = convolve2d(ref * ref, win, mode="valid") - mu1_sq
        sigma2_sq = convolve2d(dist * dist, win, mode="valid") - mu2_sq
        sigma12 = convolve2d(ref * dist, win, mode="valid") - mu1_mu2

        sigma1_sq[sigma1_sq < 0] = 0
        sigma2_sq[sigma2_sq < 0] = 0

        g_coef = sigma12 / (sigma1_sq + eps)
        sv_sq = sigma2_sq - g_coef * sigma12

        g_coef[sigma1_sq < eps] = 0
        sv_sq[sigma1_sq < eps] = sigma2_sq[sigma1_sq < eps]
        sigma1_sq[sigma1_sq < eps] = 0

        g_coef[sigma2_sq < eps] = 0
        sv_sq[sigma2_sq < eps] = 0

        sv_sq[g_coef < 0] = sigma2_sq[g_coef < 0]
        g_coef[g_coef < 0] = 0
        sv_sq[sv_sq <= eps] = eps

        num += np.sum(np.log10(1 + g_coef**2 * sigma1_sq / (sv_sq + sigma_nsq)))
        den += np.sum(np.log10(1 + sigma1_sq / sigma_nsq))

    if not any_scale:
        raise ShapeError("image smaller than the coarsest VIF analysis window")
    if den == 0.0 or not np.isfinite(num / den):
        # Degenerate reference (no information to lose): perfect fidelity.
        return 1.0
    return float(num / den)


def vif(fused: np.ndarray, ir: np.ndarray, vis: np.ndarray) -> float:
    """Pixel-domain visual information fidelity, summed over both sources."""
    f = to_gray(fused)
    a = to_gray(ir)
    b = to_gray(vis)
    if f.shape != a.shape or f.shape != b.shape:
        raise ShapeError("vif expects equal-shaped images")
    return _vif_pair(a, f) + _vif_pair(b, f)


# -- Qabf ---------------------------------------------------------------------

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = np.array([[1, 2, 1], [0, 0, 0], [-1, -2, -1]], dtype=np.float64)


def _edge_strength_angle(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Symmetric boundary: a constant image has zero edge strength everywhere,
    # which keeps the degenerate all-constant triplet at score 0.
    sx = convolve2d(img, _SOBEL_X, mode="same", boundary="symm")
    sy = convolve2d(img, _SOBEL_Y, mode="same", boundary="symm")
    strength = np.sqrt(sx * sx + sy * sy)
    angle = np.full_like(img, math.pi / 2)
    nz = sx != 0
    angle[nz] = np.arctan(sy[nz] / sx[nz])
    return strength, angle


def _edge_preservation(g_src, a_src, g_f, a_f) -> np.ndarray:
    tg, kg, dg = 0.9994, -15.0, 0.5
    ta, ka, da = 0.9879, -22.0, 0.8
    rel = np.zeros_like(g_src)
    bigger = g_src > g_f
    rel[bigger] = g_f[bigger] / g_src[bigger]
    equal = g_src == g_f
    rel[equal] = g_f[equal]
    smaller = g_src < g_f
    rel[smaller] = g_src[smaller] / g_f[smaller]
    rel_angle = 1.0 - np.abs(a_src - a_f) / (math.pi / 2)
    q_g = tg / (1 + np.exp(kg * (rel - dg)))
    q_a = ta / (1 + np.exp(ka * (rel_angle - da)))
    return q_g * q_a


def qabf(fused: np.ndarray, ir: np.ndarray, vis: np.ndarray) -> float:
    """Gradient-based edge preservation score in [0, 1].

    Per-pixel edge-strength and orientation preservation against each
    source, weighted by the source edge strengths.  Degenerate inputs
    with no edges anywhere score 0.
    """
    f = to_gray(fused)
    a = to_gray(ir)
    b = to_gray(vis)
    if f.shape != a.shape or f.shape != b.shape:
        raise ShapeError("qabf expects equal-shaped images")
    g_a, ang_a = _edge_strength_angle(a)
    g_b, ang_b = _edge_strength_angle(b)
    g_f, ang_f = _edge_strength_angle(f)
    q_af = _edge_preservation(g_a, ang_a, g_f, ang_f)
    q_bf = _edge_preservation(g_b, ang_b, g_f, ang_f)
    weight_sum = float(np.sum(g_a + g_b))
    if weight_sum == 0.0:
        return 0.0
    return float(np.sum(q_af * g_a + q_bf * g_b) / weight_sum)


# -- aggregation ----------------------------------------------------------------

METRIC_NAMES = ("en", "sd", "mi", "vif", "qabf", "ssim")


@dataclass(frozen=True)
class MetricsReport:
    en: float
    sd: float
    mi: float
    vif: float
    qabf: float
    ssim: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.en, self.sd, self.mi, self.vif, self.qabf, self.ssim)


def evaluate_fusion(fused: np.ndarray, ir: np.ndarray, vis: np.ndarray) -> MetricsReport:
    """All six metrics for one fused image against its sources."""
    return MetricsReport(
        en=entropy(fused),
        sd=std_dev(fused),
        mi=mutual_info(fused, ir, vis),
        vif=vif(fused, ir, vis),
        qabf=qabf(fused, ir, vis),
        ssim=ssim_fusion(fused, ir, vis),
    )


def mean_report(reports) -> MetricsReport:
    """Column-wise mean of per-image reports."""
    reports = list(reports)
    if not reports:
        raise ShapeError("mean_report needs at least one report")
    cols = np.array([r.as_tuple() for r in reports], dtype=np.float64)
    return MetricsReport(*[float(v) for v in cols.mean(axis=0)])
