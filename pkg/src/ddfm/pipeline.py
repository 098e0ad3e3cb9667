"""Fusion orchestration: the sampling loop, the EM-only mode, and run manifests.

Step indexing: schedules are 1-based internally (t = 1..T, t = 0 clean).
The main loop iterates t = T down to 1; each iteration consumes the
state f_t and produces f_{t-1}, so the chain ends at the clean image
f_0.  This is the only place the loop/array index mapping appears.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import em as em_mod
from .errors import ConfigError, NumericError, ShapeError, TransportError
from .sampler import make_rng, predict_x0, reverse_step
from .schedule import NoiseSchedule, build_linear_schedule, respaced
from .score import AnalyticGaussianScore, RemoteScore, ScoreModel
from .tensor import as_image, broadcast_ir, denormalize, normalize

MODES = ("ddfm", "em_only", "no_tv", "fixed_phi")
MANIFEST_FORMAT = "ddfm-manifest-v1"


@dataclass(frozen=True)
class FusionConfig:
    """Everything that determines a fusion run besides the input images."""

    mode: str = "ddfm"
    steps: int = 1000
    seed: int = 0
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sampler_variance: str = "zero"
    stride: int = 1
    psi: float = 0.5
    eta: float = 0.1
    epsilon_clamp: float = 1e-6
    em_iters: int | None = None
    fixed_phi: float | None = None
    score: str = "analytic"
    mu0: np.ndarray | None = None
    var0: float = 1.0
    endpoint: tuple[str, int] | None = None

    def validated(self) -> "FusionConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "fixed_phi" and self.fixed_phi is None:
            raise ConfigError("mode fixed_phi requires the fixed_phi weight")
        if self.mode == "em_only" and self.em_iters is not None and self.em_iters < 1:
            raise ConfigError("em_only requires em_iters >= 1")
        if self.score not in ("analytic", "remote"):
            raise ConfigError(f"score must be analytic or remote, got {self.score!r}")
        if self.score == "remote" and self.endpoint is None:
            raise ConfigError("remote score requires an endpoint")
        return self

    def em_params(self) -> em_mod.EmParams:
        return em_mod.EmParams(
            psi=0.0 if self.mode == "no_tv" else self.psi,
            eta=self.eta,
            epsilon_clamp=self.epsilon_clamp,
            fixed_phi=self.fixed_phi if self.mode == "fixed_phi" else None,
        )


@dataclass
class RunManifest:
    """Ordered key/value record that, together with the inputs, reproduces a run.

    Only deterministic values are stored so two identical runs write
    byte-identical manifests; wall-clock time is reported on the logger,
    not here.
    """

    entries: list[tuple[str, str]] = field(default_factory=list)

    def add(self, key: str, value) -> None:
        self.entries.append((key, _fmt(value)))

    def to_text(self) -> str:
        lines = [f"{k} = {v}" for k, v in self.entries]
        return "\n".join(lines) + "\n"

    def get(self, key: str) -> str:
        for k, v in self.entries:
            if k == key:
                return v
        raise KeyError(key)

    def get_all(self, key: str) -> list[str]:
        return [v for k, v in self.entries if k == key]

    @classmethod
    def from_text(cls, text: str) -> "RunManifest":
        manifest = cls()
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            manifest.entries.append((key.strip(), value.strip()))
        return manifest


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def array_sha256(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def fit_to_shape(img: np.ndarray, height: int, width: int) -> tuple[np.ndarray, dict]:
    """Center-crop when larger, reflect-pad when smaller, per axis.

    Returns the fitted image and the geometry needed to undo the padding
    (cropped content is gone; the manifest records the offsets).
    """
    arr = as_image(img)
    h, w = arr.shape[:2]
    top = max((h - height) // 2, 0)
    left = max((w - width) // 2, 0)
    arr = arr[top : top + min(h, height), left : left + min(w, width), :]
    pad_h = height - arr.shape[0]
    pad_w = width - arr.shape[1]
    if pad_h > 0 or pad_w > 0:
        arr = np.pad(
            arr,
            ((0, pad_h), (0, pad_w), (0, 0)),
            mode="reflect" if min(arr.shape[0], arr.shape[1]) > 1 else "edge",
        )
    geometry = {
        "crop_top": top,
        "crop_left": left,
        "pad_bottom": pad_h,
        "pad_right": pad_w,
        "out_height": min(h, height),
        "out_width": min(w, width),
    }
    return arr, geometry


def _build_score(config: FusionConfig, vis_norm: np.ndarray):
    """Score model plus the schedule to run it with."""
    if config.score == "analytic":
        mu0 = vis_norm if config.mu0 is None else np.asarray(config.mu0, dtype=np.float64)
        model: ScoreModel = AnalyticGaussianScore(mu0, config.var0)
        schedule = build_linear_schedule(
            config.steps, config.beta_start, config.beta_end, config.sampler_variance
        )
        return model, schedule, None
    host, port = config.endpoint  # type: ignore[misc]
    remote = RemoteScore(host, port)
    info = remote.connect()
    schedule = remote.server_schedule(variance=config.sampler_variance)
    return remote, schedule, info


def _prepare_inputs(ir: np.ndarray, vis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ir = as_image(ir)
    vis = as_image(vis)
    if ir.shape[2] != 1:
        raise ShapeError(f"infrared input must be single-channel, got {ir.shape[2]}")
    if vis.shape[2] not in (1, 3):
        raise ShapeError(f"visible input must have 1 or 3 channels, got {vis.shape[2]}")
    if ir.shape[:2] != vis.shape[:2]:
        raise ShapeError(f"source images differ in size: {ir.shape[:2]} vs {vis.shape[:2]}")
    return ir, vis


def _base_manifest(config: FusionConfig, ir: np.ndarray, vis: np.ndarray) -> RunManifest:
    manifest = RunManifest()
    manifest.add("format", MANIFEST_FORMAT)
    manifest.add("mode", config.mode)
    manifest.add("seed", config.seed)
    manifest.add("psi", config.psi)
    manifest.add("eta", config.eta)
    manifest.add("epsilon_clamp", config.epsilon_clamp)
    if config.mode == "fixed_phi":
        manifest.add("fixed_phi", config.fixed_phi)
    manifest.add("score", config.score)
    if config.score == "analytic":
        manifest.add("var0", config.var0)
        if config.mu0 is not None:
            manifest.add("mu0_sha256", array_sha256(np.asarray(config.mu0, dtype=np.float64)))
    manifest.add("ir_sha256", array_sha256(ir))
    manifest.add("vis_sha256", array_sha256(vis))
    manifest.add("input_height", ir.shape[0])
    manifest.add("input_width", ir.shape[1])
    return manifest


def fuse(ir: np.ndarray, vis: np.ndarray, config: FusionConfig):
    """Dispatch to the configured fusion mode.  Inputs and output in [0, 255]."""
    config = config.validated()
    if config.mode == "em_only":
        return em_only_fuse(ir, vis, config)
    return ddfm_fuse(ir, vis, config)


def ddfm_fuse(
    ir: np.ndarray,
    vis: np.ndarray,
    config: FusionConfig,
    score_model: ScoreModel | None = None,
    schedule: NoiseSchedule | None = None,
):
    """Diffusion-driven fusion: the sampling loop with per-step rectification.

    Returns (fused [0, 255] float image, RunManifest).  Deterministic for
    fixed (inputs, config, seed) when sampler_variance is zero; with a
    remote score model the run additionally depends on the server state.
    """
    config = config.validated()
    if config.mode == "em_only":
        raise ConfigError("ddfm_fuse does not run mode em_only; call em_only_fuse")
    ir, vis = _prepare_inputs(ir, vis)
    manifest = _base_manifest(config, ir, vis)
    started = time.monotonic()

    ir_n = normalize(ir)
    vis_n = normalize(vis)

    owns_session = False
    info = None
    if score_model is None:
        score_model, schedule, info = _build_score(config, vis_n)
        owns_session = isinstance(score_model, RemoteScore)
    elif schedule is None:
        schedule = build_linear_schedule(
            config.steps, config.beta_start, config.beta_end, config.sampler_variance
        )

    try:
        geometry = None
        if info is not None:
            target = (info["height"], info["width"])
            if ir_n.shape[:2] != target:
                ir_n, geometry = fit_to_shape(ir_n, *target)
                vis_n, _ = fit_to_shape(vis_n, *target)
            if info["channels"] != vis_n.shape[2]:
                if vis_n.shape[2] == 1 and info["channels"] == 3:
                    vis_n = broadcast_ir(vis_n, 3)
                else:
                    raise ConfigError(
                        f"server expects {info['channels']}-channel tensors, "
                        f"visible input has {vis_n.shape[2]}"
                    )
        if config.stride > 1:
            schedule = respaced(schedule, config.stride, config.sampler_variance)

        manifest.add("steps", schedule.steps)
        manifest.add("sampler_variance", config.sampler_variance)
        manifest.add("stride", config.stride)
        manifest.add("schedule_sha256", array_sha256(schedule.beta))
        manifest.add("working_height", ir_n.shape[0])
        manifest.add("working_width", ir_n.shape[1])
        if geometry is not None:
            for key, value in geometry.items():
                manifest.add(f"fit_{key}", value)

        ir3 = broadcast_ir(ir_n, vis_n.shape[2])
        params = config.em_params()
        height, width, channels = vis_n.shape
        state = em_mod.initial_state(height, width, channels)
        rng = make_rng(config.seed)
        f = rng.standard_normal((height, width, channels))

        trace: list[tuple[int, float, float, float]] = []
        try:
            for t in range(schedule.steps, 0, -1):
                s = score_model.evaluate(f, t, schedule)
                f0_tilde = predict_x0(f, s, t, schedule)
                f0_hat, state = em_rectify_traced(
                    f0_tilde, ir3, vis_n, state, params, trace, t
                )
                z = rng.standard_normal(f.shape) if schedule.sigma_tilde[t - 1] > 0 else None
                f = reverse_step(f, f0_hat, t, schedule, z)
        except TransportError as exc:
            # Abort, but hand the partial manifest to the caller so the run
            # so far (config echo, schedule, loss trace) can be flushed.
            manifest.add("aborted", "score-transport-error")
            for t, lx_before, lx_after, q_val in trace:
                manifest.add(f"loss[{t}]", f"{lx_before!r} {lx_after!r} {q_val!r}")
            exc.manifest = manifest
            raise

        fused_n = np.clip(f, -1.0, 1.0)
        fused = denormalize(fused_n)
        if geometry is not None and (geometry["pad_bottom"] or geometry["pad_right"]):
            fused = fused[: geometry["out_height"], : geometry["out_width"], :]

        for t, lx_before, lx_after, q_val in trace:
            manifest.add(f"loss[{t}]", f"{lx_before!r} {lx_after!r} {q_val!r}")
        manifest.add("fused_sha256", array_sha256(fused))
        _log_elapsed(started)
        return fused, manifest
    finally:
        if owns_session:
            score_model.close()  # type: ignore[union-attr]


def em_rectify_traced(f0_tilde, ir3, vis_n, state, params, trace, t):
    """Rectify and record the least-squares loss before/after.

    The rectified estimate solves the weighted least-squares subproblem
    exactly, so its loss can never exceed the unrectified one; the margin
    is asserted because a violation means the closed forms are broken.
    """
    f0_hat, new_state = em_mod.em_rectify(f0_tilde, ir3, vis_n, state, params)
    x_tilde = f0_tilde - vis_n
    lx_before = em_mod.lx_objective(
        x_tilde, new_state.y, new_state.k, new_state.m_bar, new_state.n_bar, params.eta
    )
    lx_after = em_mod.lx_objective(
        new_state.x, new_state.y, new_state.k, new_state.m_bar, new_state.n_bar, params.eta
    )
    if lx_after > lx_before + 1e-9 * max(1.0, abs(lx_before)):
        raise NumericError(
            f"rectification increased the least-squares loss at step {t}: "
            f"{lx_before} -> {lx_after}"
        )
    q_val = em_mod.q_objective(
        new_state.x, new_state.y, new_state.m_bar, new_state.n_bar, params.psi
    )
    trace.append((t, lx_before, lx_after, q_val))
    return f0_hat, new_state


def em_only_fuse(ir: np.ndarray, vis: np.ndarray, config: FusionConfig):
    """Fusion by repeated EM passes alone, starting from x = 0 (f = vis).

    Runs em_iters passes (defaulting to the configured step count so the
    iteration budget matches a diffusion run) and returns x + vis.
    """
    config = config.validated()
    ir, vis = _prepare_inputs(ir, vis)
    manifest = _base_manifest(config, ir, vis)
    started = time.monotonic()

    iters = config.em_iters if config.em_iters is not None else config.steps
    manifest.add("em_iters", iters)

    ir_n = normalize(ir)
    vis_n = normalize(vis)
    ir3 = broadcast_ir(ir_n, vis_n.shape[2])
    params = config.em_params()
    height, width, channels = vis_n.shape
    state = em_mod.initial_state(height, width, channels)

    f = vis_n.copy()
    trace: list[tuple[int, float, float, float]] = []
    for i in range(iters):
        f, state = em_rectify_traced(f, ir3, vis_n, state, params, trace, i + 1)

    fused = denormalize(np.clip(f, -1.0, 1.0))
    for i, lx_before, lx_after, q_val in trace:
        manifest.add(f"loss[{i}]", f"{lx_before!r} {lx_after!r} {q_val!r}")
    manifest.add("fused_sha256", array_sha256(fused))
    _log_elapsed(started)
    return fused, manifest


def _log_elapsed(started: float) -> None:
    logging.getLogger(__name__).info(
        "fusion finished in %.2f s", time.monotonic() - started
    )


def parse_loss_trace(manifest: RunManifest) -> list[tuple[float, float, float]]:
    """Loss trace rows (lx_before, lx_after, q) in loop order."""
    rows = []
    for key, value in manifest.entries:
        if key.startswith("loss["):
            parts = value.split()
            rows.append((float(parts[0]), float(parts[1]), float(parts[2])))
    return rows
