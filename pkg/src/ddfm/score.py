"""Score models: the gradient of the log-density of the noised image marginal.

The engine consumes scores; checkpoints that predict noise are converted
at the client via score = -eps / sqrt(1 - alpha_bar_t).
"""

from __future__ import annotations

import socket

import numpy as np

from . import wire
from .errors import CapabilityError, NumericError, ParameterError, ShapeError, TransportError
from .schedule import NoiseSchedule, from_betas
from .tensor import as_image


class ScoreModel:
    """Interface: evaluate(f_t, t, schedule) -> score of the same shape."""

    def evaluate(self, f_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
        raise NotImplementedError


class AnalyticGaussianScore(ScoreModel):
    """Exact score when the clean data is N(mu0, var0 * I).

    The forward-noised marginal at step t is
    N(sqrt(abar_t) * mu0, (abar_t * var0 + 1 - abar_t) * I), whose score
    is available in closed form.  Used as a test oracle and for
    desk-scale runs without a pretrained model.
    """

    def __init__(self, mu0, var0: float):
        self.mu0 = np.asarray(mu0, dtype=np.float64)
        self.var0 = float(var0)
        if self.var0 <= 0.0:
            raise ParameterError(f"var0 must be positive, got {var0}")

    def evaluate(self, f_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
        f_t = as_image(f_t)
        if t < 1 or t > schedule.steps:
            raise ParameterError(f"step {t} outside [1, {schedule.steps}]")
        if self.mu0.ndim != 0 and self.mu0.shape != f_t.shape:
            raise ShapeError(f"mu0 shape {self.mu0.shape} does not match input {f_t.shape}")
        abar = schedule.alpha_bar_at(t)
        marginal_var = abar * self.var0 + (1.0 - abar)
        return -(f_t - np.sqrt(abar) * self.mu0) / marginal_var


def analytic_score(f_t, t, schedule, mu0, var0: float) -> np.ndarray:
    """Functional form of :class:`AnalyticGaussianScore`."""
    return AnalyticGaussianScore(mu0, var0).evaluate(f_t, t, schedule)


class RemoteScore(ScoreModel):
    """Client session for a score server speaking the wire protocol.

    One request is in flight at a time per session.  The handshake fixes
    the server's output kind, supported tensor shape, and training
    schedule; call :meth:`server_schedule` to adopt that schedule.
    Connection loss during evaluation triggers ``retries`` transparent
    reconnect attempts before a TransportError reaches the caller.
    """

    def __init__(self, host: str, port: int, retries: int = 2, timeout: float = 30.0):
        self.host = host
        self.port = int(port)
        self.retries = int(retries)
        self.timeout = float(timeout)
        self._sock: socket.socket | None = None
        self._info: dict | None = None

    # -- session management -------------------------------------------------

    def connect(self) -> dict:
        """Open the socket and perform the handshake, retrying transport
        failures per the session's retry policy; idempotent."""
        if self._sock is not None:
            return self._info  # type: ignore[return-value]
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                return self._connect_once()
            except TransportError as exc:
                last = exc
        raise TransportError(
            f"handshake with {self.host}:{self.port} failed after "
            f"{self.retries + 1} attempts: {last}"
        ) from last

    def _connect_once(self) -> dict:
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach score server at {self.host}:{self.port}: {exc}") from exc
        try:
            wire.send_frame(sock, wire.encode_client_hello())
            reply = wire.recv_frame(sock)
            if not reply:
                raise wire.ProtocolError("empty handshake reply")
            if reply[0] != wire.STATUS_OK:
                message = wire.decode_error_message(reply)
                raise CapabilityError(f"server refused handshake: {message}")
            info = wire.decode_server_hello(reply)
        except Exception:
            sock.close()
            raise
        self._sock = sock
        self._info = info
        return info

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def __enter__(self) -> "RemoteScore":
        self.connect()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def info(self) -> dict:
        if self._info is None:
            self.connect()
        return self._info  # type: ignore[return-value]

    def server_schedule(self, variance: str = "zero") -> NoiseSchedule:
        """The schedule the checkpoint was trained with, as advertised."""
        return from_betas(self.info["betas"], variance=variance)

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, f_t: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
        f_t = as_image(f_t)
        info = self.info
        expected = (info["height"], info["width"], info["channels"])
        if f_t.shape != expected:
            raise CapabilityError(
                f"server supports {expected[0]}x{expected[1]}x{expected[2]} tensors, "
                f"got {f_t.shape[0]}x{f_t.shape[1]}x{f_t.shape[2]}"
            )
        model_t = schedule.model_timestep(t)
        reply = self._round_trip(wire.encode_request(model_t, f_t))
        out = wire.decode_server_response(reply)
        if out.shape != f_t.shape:
            raise wire.ProtocolError(f"server returned shape {out.shape}, expected {f_t.shape}")
        if not np.all(np.isfinite(out)):
            raise wire.ProtocolError("server payload contains non-finite values")
        if info["kind"] == wire.KIND_EPSILON:
            abar = schedule.alpha_bar_at(t)
            if abar >= 1.0:
                raise NumericError("epsilon-to-score conversion undefined at alpha_bar = 1")
            return -out / np.sqrt(1.0 - abar)
        return out

    def _round_trip(self, request: bytes) -> bytes:
        attempts = self.retries + 1
        last: Exception | None = None
        for attempt in range(attempts):
            try:
                self.connect()
                wire.send_frame(self._sock, request)  # type: ignore[arg-type]
                return wire.recv_frame(self._sock)  # type: ignore[arg-type]
            except TransportError as exc:
                last = exc
                self.close()
        raise TransportError(
            f"score request failed after {attempts} attempts: {last}"
        ) from last
