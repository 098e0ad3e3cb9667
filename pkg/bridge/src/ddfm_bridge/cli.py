"""Command line for the bridge: load a checkpoint and serve it."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .server import BridgeConfig, serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ddfm-bridge", description="Score wire-protocol server")
    sub = parser.add_subparsers(dest="command", required=True)
    serve_p = sub.add_parser("serve", help="serve a TorchScript denoiser checkpoint")
    serve_p.add_argument("--checkpoint", required=True)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=7465)
    serve_p.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    config = BridgeConfig(
        checkpoint=Path(args.checkpoint),
        host=args.host,
        port=args.port,
        device=args.device,
    )
    try:
        serve(config)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
