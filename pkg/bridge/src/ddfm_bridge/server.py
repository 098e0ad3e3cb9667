"""The serving loop: one denoiser, many connections, one request in flight each."""

from __future__ import annotations

import logging
import socketserver
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import protocol
from .checkpoint import LoadedModel, load_checkpoint

log = logging.getLogger(__name__)


@dataclass
class BridgeConfig:
    checkpoint: Path
    host: str = "127.0.0.1"
    port: int = 7465
    device: str = "cpu"
    # advertised as epsilon so the client performs the score conversion
    kind: int = protocol.KIND_EPSILON


@dataclass
class BridgeServer:
    """TCP server speaking the score wire protocol for one loaded model.

    Use as a context manager (background thread) or call
    :meth:`serve_forever` to block.  Responses are deterministic: the
    model runs in eval mode under no_grad with deterministic kernels
    requested from torch.
    """

    config: BridgeConfig
    model: LoadedModel = field(init=False)

    def __post_init__(self):
        torch.use_deterministic_algorithms(True, warn_only=True)
        self.model = load_checkpoint(self.config.checkpoint, self.config.device)
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                try:
                    outer._session(self.request)
                except (protocol.WireError, ConnectionError, OSError) as exc:
                    log.info("connection closed: %s", exc)

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((self.config.host, self.config.port), Handler)
        self._thread: threading.Thread | None = None

    # -- session ------------------------------------------------------------

    def _session(self, sock) -> None:
        hello = protocol.read_frame(sock)
        try:
            version = protocol.parse_client_hello(hello)
        except protocol.WireError as exc:
            protocol.write_frame(
                sock, protocol.error_reply(protocol.STATUS_PROTOCOL_ERROR, str(exc))
            )
            return
        if version != protocol.VERSION:
            protocol.write_frame(
                sock,
                protocol.error_reply(
                    protocol.STATUS_CAPABILITY_ERROR,
                    f"unsupported protocol version {version}; this bridge speaks {protocol.VERSION}",
                ),
            )
            return
        model = self.model
        protocol.write_frame(
            sock,
            protocol.hello_reply(
                self.config.kind, model.image_size, model.image_size, model.channels, model.betas
            ),
        )
        while True:
            payload = protocol.read_frame(sock)
            try:
                t, tensor = protocol.parse_request(payload)
            except protocol.WireError as exc:
                protocol.write_frame(
                    sock, protocol.error_reply(protocol.STATUS_PROTOCOL_ERROR, str(exc))
                )
                return  # malformed request: answer, then drop the connection
            reply = self._answer(t, tensor)
            protocol.write_frame(sock, reply)

    def _answer(self, t: int, tensor: np.ndarray) -> bytes:
        model = self.model
        expected = (model.image_size, model.image_size, model.channels)
        if tensor.shape != expected:
            return protocol.error_reply(
                protocol.STATUS_CAPABILITY_ERROR,
                f"supported tensor shape is {expected[0]}x{expected[1]}x{expected[2]}, "
                f"got {tensor.shape[0]}x{tensor.shape[1]}x{tensor.shape[2]}",
            )
        if not 1 <= t <= model.steps:
            return protocol.error_reply(
                protocol.STATUS_CAPABILITY_ERROR,
                f"step {t} outside [1, {model.steps}]",
            )
        if not np.all(np.isfinite(tensor)):
            return protocol.error_reply(
                protocol.STATUS_PROTOCOL_ERROR, "request tensor contains non-finite values"
            )
        out = model.epsilon(tensor, t)
        return protocol.tensor_reply(out)

    # -- lifecycle ------------------------------------------------------------

    @property
    def endpoint(self) -> tuple[str, int]:
        return self._server.server_address

    def serve_forever(self) -> None:
        log.info(
            "serving %s (%dx%d, %d channels, %d steps) on %s:%d",
            self.config.checkpoint,
            self.model.image_size,
            self.model.image_size,
            self.model.channels,
            self.model.steps,
            *self.endpoint,
        )
        self._server.serve_forever()

    def __enter__(self) -> "BridgeServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()


def serve(config: BridgeConfig) -> None:
    """Load the checkpoint and serve until interrupted."""
    BridgeServer(config).serve_forever()
