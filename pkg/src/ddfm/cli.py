"""Command-line front end.

Subcommands: fuse, evaluate, sample, selftest.  Option precedence is
flags > config file > built-in defaults; the config file is flat
``key = value`` text with ``#`` comments, keys named like the long flags
with underscores.

Exit codes: 0 success, 1 configuration/usage error, 2 I/O error,
3 score-transport error, 4 failing selftest oracle.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import ConfigError, FileFormatError, FusionError, TransportError
from .metrics import METRIC_NAMES, evaluate_fusion, mean_report
from .pipeline import FusionConfig, fuse
from .sampler import sample_unconditional
from .schedule import build_linear_schedule
from .score import AnalyticGaussianScore, RemoteScore
from .tensor import denormalize, normalize, read_png, write_png

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_TRANSPORT = 3
EXIT_SELFTEST = 4

DEFAULTS = {
    "mode": "ddfm",
    "steps": 1000,
    "seed": 0,
    "psi": 0.5,
    "eta": 0.1,
    "epsilon_clamp": 1e-6,
    "beta_start": 1e-4,
    "beta_end": 0.02,
    "sampler_variance": "zero",
    "stride": 1,
    "score": "analytic",
    "var0": 1.0,
    "jobs": 1,
}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the CLI contract reserves 2 for I/O.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ddfm", description="Diffusion-driven image fusion engine")
    sub = parser.add_subparsers(dest="command", required=True)

    fuse_p = sub.add_parser("fuse", help="fuse an infrared/visible pair (or directories)")
    fuse_p.add_argument("--ir", required=True, help="infrared PNG or directory")
    fuse_p.add_argument("--vis", required=True, help="visible PNG or directory")
    fuse_p.add_argument("--out", required=True, help="output PNG or directory")
    fuse_p.add_argument("--mode", choices=["ddfm", "em_only", "no_tv", "fixed_phi"])
    fuse_p.add_argument("--steps", type=int)
    fuse_p.add_argument("--seed", type=int)
    fuse_p.add_argument("--psi", type=float)
    fuse_p.add_argument("--eta", type=float)
    fuse_p.add_argument("--phi", type=float, help="fixed weight for mode fixed_phi")
    fuse_p.add_argument("--em-iters", type=int, dest="em_iters")
    fuse_p.add_argument("--score", help="analytic or remote[:HOST:PORT]")
    fuse_p.add_argument("--mu0", help="PNG with the analytic prior mean")
    fuse_p.add_argument("--var0", type=float)
    fuse_p.add_argument("--beta-start", type=float, dest="beta_start")
    fuse_p.add_argument("--beta-end", type=float, dest="beta_end")
    fuse_p.add_argument("--sampler-variance", choices=["zero", "posterior"],
                        dest="sampler_variance")
    fuse_p.add_argument("--stride", type=int)
    fuse_p.add_argument("--jobs", type=int)
    fuse_p.add_argument("--config", help="key = value config file")

    eval_p = sub.add_parser("evaluate", help="compute fusion metrics for matched triplets")
    eval_p.add_argument("--fused", required=True, help="directory of fused PNGs")
    eval_p.add_argument("--ir", required=True, help="directory of infrared PNGs")
    eval_p.add_argument("--vis", required=True, help="directory of visible PNGs")
    eval_p.add_argument("--out", help="output table path (default: stdout)")
    eval_p.add_argument("--delimiter", default=",")

    sample_p = sub.add_parser("sample", help="unconditional sampling sanity run")
    sample_p.add_argument("--out", required=True)
    sample_p.add_argument("--steps", type=int)
    sample_p.add_argument("--seed", type=int)
    sample_p.add_argument("--score")
    sample_p.add_argument("--mu0", help="PNG with the analytic prior mean")
    sample_p.add_argument("--var0", type=float)
    sample_p.add_argument("--size", default="64x64", help="HxW for the analytic prior")
    sample_p.add_argument("--sampler-variance", choices=["zero", "posterior"],
                          dest="sampler_variance")
    sample_p.add_argument("--config")

    self_p = sub.add_parser("selftest", help="run the built-in numerical oracles")
    self_p.add_argument("--quick", action="store_true",
                        help="reduced sample counts, looser tolerances")
    return parser


def _load_config_file(path: str) -> dict:
    values: dict = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        values[key.strip()] = value.strip()
    return values


def _setting(args, file_cfg: dict, key: str):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_cfg:
        raw = file_cfg[key]
        default = DEFAULTS.get(key)
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    return DEFAULTS.get(key)


def _parse_score(value: str, file_cfg: dict):
    """'analytic' | 'remote' | 'remote:HOST:PORT' -> (kind, endpoint)."""
    if value == "analytic":
        return "analytic", None
    if value == "remote" or value.startswith("remote:"):
        target = value[len("remote:"):] if value.startswith("remote:") else ""
        if not target:
            target = file_cfg.get("endpoint", os.environ.get("DDFM_SCORE_ENDPOINT", ""))
        if not target or ":" not in target:
            raise ConfigError(
                "remote score needs remote:HOST:PORT or DDFM_SCORE_ENDPOINT"
            )
        host, _, port = target.rpartition(":")
        try:
            return "remote", (host, int(port))
        except ValueError as exc:
            raise ConfigError(f"bad endpoint {target!r}") from exc
    raise ConfigError(f"unknown score {value!r}; use analytic or remote[:HOST:PORT]")


def _fusion_config(args, file_cfg: dict) -> FusionConfig:
    score_kind, endpoint = _parse_score(_setting(args, file_cfg, "score"), file_cfg)
    mu0 = None
    mu0_path = getattr(args, "mu0", None) or file_cfg.get("mu0")
    if mu0_path:
        mu0 = normalize(read_png(mu0_path))
    return FusionConfig(
        mode=_setting(args, file_cfg, "mode"),
        steps=_setting(args, file_cfg, "steps"),
        seed=_setting(args, file_cfg, "seed"),
        beta_start=_setting(args, file_cfg, "beta_start"),
        beta_end=_setting(args, file_cfg, "beta_end"),
        sampler_variance=_setting(args, file_cfg, "sampler_variance"),
        stride=_setting(args, file_cfg, "stride"),
        psi=_setting(args, file_cfg, "psi"),
        eta=_setting(args, file_cfg, "eta"),
        epsilon_clamp=_setting(args, file_cfg, "epsilon_clamp"),
        em_iters=getattr(args, "em_iters", None)
        or (int(file_cfg["em_iters"]) if "em_iters" in file_cfg else None),
        fixed_phi=getattr(args, "phi", None)
        or (float(file_cfg["phi"]) if "phi" in file_cfg else None),
        score=score_kind,
        mu0=mu0,
        var0=_setting(args, file_cfg, "var0"),
        endpoint=endpoint,
    ).validated()


def _fuse_one(ir_path: Path, vis_path: Path, out_path: Path, config: FusionConfig) -> None:
    ir = read_png(ir_path)
    vis = read_png(vis_path)
    try:
        fused, manifest = fuse(ir, vis, config)
    except TransportError as exc:
        # flush whatever the aborted run recorded before surfacing the error
        partial = getattr(exc, "manifest", None)
        if partial is not None:
            _write_manifest(out_path, partial)
        raise
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_png(out_path, fused)
    _write_manifest(out_path, manifest)


def _write_manifest(out_path: Path, manifest) -> None:
    out_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path = out_path.with_suffix(out_path.suffix + ".manifest")
    tmp = manifest_path.with_suffix(".tmp")
    tmp.write_text(manifest.to_text())
    tmp.replace(manifest_path)


def _matched_pngs(*dirs: Path) -> list[str]:
    """Basenames present in every directory; orphans abort with a listing."""
    names = [{p.name for p in d.glob("*.png")} for d in dirs]
    common = set.intersection(*names) if names else set()
    orphans = sorted(set.union(*names) - common) if names else []
    if orphans:
        raise FileNotFoundError(
            "unmatched files (present in some directories only): " + ", ".join(orphans)
        )
    if not common:
        raise FileNotFoundError(f"no matched .png triplets under {', '.join(map(str, dirs))}")
    return sorted(common)


def cmd_fuse(args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}
    config = _fusion_config(args, file_cfg)
    ir_path, vis_path, out_path = Path(args.ir), Path(args.vis), Path(args.out)
    if ir_path.is_dir() != vis_path.is_dir():
        raise ConfigError("--ir and --vis must both be files or both directories")
    if not ir_path.is_dir():
        _fuse_one(ir_path, vis_path, out_path, config)
        return EXIT_OK
    names = _matched_pngs(ir_path, vis_path)
    jobs = max(1, int(_setting(args, file_cfg, "jobs")))
    out_path.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(_fuse_one, ir_path / name, vis_path / name, out_path / name, config)
            for name in names
        ]
        for future in futures:
            future.result()
    return EXIT_OK


def cmd_evaluate(args) -> int:
    fused_dir, ir_dir, vis_dir = Path(args.fused), Path(args.ir), Path(args.vis)
    for d in (fused_dir, ir_dir, vis_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"not a directory: {d}")
    names = _matched_pngs(fused_dir, ir_dir, vis_dir)
    reports = []
    rows = []
    for name in names:
        report = evaluate_fusion(
            read_png(fused_dir / name), read_png(ir_dir / name), read_png(vis_dir / name)
        )
        reports.append(report)
        rows.append((name, report))
    mean = mean_report(reports)

    delim = args.delimiter
    lines = [delim.join(("image",) + tuple(METRIC_NAMES))]
    for name, report in rows:
        lines.append(delim.join([name] + [f"{v:.9f}" for v in report.as_tuple()]))
    lines.append(delim.join(["mean"] + [f"{v:.9f}" for v in mean.as_tuple()]))
    table = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(table)
    else:
        sys.stdout.write(table)
    return EXIT_OK


def cmd_sample(args) -> int:
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
    steps = _setting(args, file_cfg, "steps")
    seed = _setting(args, file_cfg, "seed")
    variance = _setting(args, file_cfg, "sampler_variance")
    score_kind, endpoint = _parse_score(_setting(args, file_cfg, "score"), file_cfg)

    if score_kind == "remote":
        host, port = endpoint
        with RemoteScore(host, port) as remote:
            info = remote.info
            schedule = remote.server_schedule(variance=variance)
            shape = (info["height"], info["width"], info["channels"])
            out = sample_unconditional(remote, schedule, seed, shape)
    else:
        try:
            h, w = (int(v) for v in args.size.lower().split("x"))
        except ValueError as exc:
            raise ConfigError(f"--size expects HxW, got {args.size!r}") from exc
        mu0_path = getattr(args, "mu0", None) or file_cfg.get("mu0")
        if mu0_path:
            mu0 = normalize(read_png(mu0_path))
            shape = mu0.shape
        else:
            mu0 = np.zeros((h, w, 3))
            shape = (h, w, 3)
        model = AnalyticGaussianScore(mu0, _setting(args, file_cfg, "var0"))
        schedule = build_linear_schedule(
            steps,
            _setting(args, file_cfg, "beta_start"),
            _setting(args, file_cfg, "beta_end"),
            variance,
        )
        out = sample_unconditional(model, schedule, seed, shape)

    write_png(Path(args.out), denormalize(np.clip(out, -1.0, 1.0)))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_all

    results = run_all(quick=args.quick)
    failed = False
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status}: {result.name} ({result.detail})")
        failed = failed or not result.passed
    return EXIT_SELFTEST if failed else EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "fuse":
            return cmd_fuse(args)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "sample":
            return cmd_sample(args)
        return cmd_selftest(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (OSError, FileFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
