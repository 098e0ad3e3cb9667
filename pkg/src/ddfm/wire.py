"""Binary wire protocol for remote score evaluation.

This file is the single normative description of the protocol; the
standalone bridge server implements the same layout independently and
both sides are pinned by shared binary conformance vectors.

All integers are little-endian.  Every message is a frame::

    frame          := u32 payload_length | payload

Session layout (client connects over TCP):

    client hello   := b"DDFM" | u32 version          (first client frame)
    server reply   := u8 status | body               (every server frame)
        status 0 on the hello reply:
            u8 kind (0 = score, 1 = epsilon) | u32 height | u32 width |
            u32 channels | u32 T | T x f64 beta
        status 0 on an evaluate reply:
            tensor_block
        status 1 (protocol error) or 2 (capability error):
            u32 n | n bytes UTF-8 message
    request        := u32 t | tensor_block           (subsequent client frames)

    tensor_block   := u32 height | u32 width | u32 channels |
                      height*width*channels x f32, row-major,
                      channel-interleaved

Tensor payloads are float32; decoding widens to float64 (the engine's
internal precision), which is lossless, so decode-then-encode reproduces
the original bytes exactly.
"""

from __future__ import annotations

import hashlib
import socket
import struct

import numpy as np

from .errors import ProtocolError, TransportError

MAGIC = b"DDFM"
VERSION = 1

KIND_SCORE = 0
KIND_EPSILON = 1

STATUS_OK = 0
STATUS_PROTOCOL_ERROR = 1
STATUS_CAPABILITY_ERROR = 2

MAX_FRAME_BYTES = 1 << 30


def encode_tensor_block(arr: np.ndarray) -> bytes:
    """Serialize an (H, W, C) array as a tensor block."""
    arr = np.asarray(arr)
    if arr.ndim != 3:
        raise ProtocolError(f"tensor block requires an (H, W, C) array, got shape {arr.shape}")
    h, w, c = arr.shape
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return struct.pack("<III", h, w, c) + payload


def decode_tensor_block(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor block from ``buf`` starting at ``offset``.

    Returns the float64 array and the offset just past the block.
    """
    if len(buf) - offset < 12:
        raise ProtocolError("tensor block truncated before header")
    h, w, c = struct.unpack_from("<III", buf, offset)
    offset += 12
    count = h * w * c
    if h < 1 or w < 1 or c < 1 or count > MAX_FRAME_BYTES // 4:
        raise ProtocolError(f"implausible tensor dimensions {h}x{w}x{c}")
    nbytes = 4 * count
    if len(buf) - offset < nbytes:
        raise ProtocolError(f"tensor block truncated: want {nbytes} payload bytes")
    flat = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    offset += nbytes
    return flat.astype(np.float64).reshape(h, w, c), offset


def encode_client_hello(version: int = VERSION) -> bytes:
    return MAGIC + struct.pack("<I", version)


def decode_client_hello(payload: bytes) -> int:
    if len(payload) != 8 or payload[:4] != MAGIC:
        raise ProtocolError("malformed hello: expected DDFM magic + u32 version")
    return struct.unpack_from("<I", payload, 4)[0]


def encode_server_hello(kind: int, height: int, width: int, channels: int, betas) -> bytes:
    beta = np.asarray(betas, dtype="<f8")
    head = struct.pack("<BBIIII", STATUS_OK, kind, height, width, channels, len(beta))
    return head + beta.tobytes()


def decode_server_hello(payload: bytes) -> dict:
    """Decode a status-0 hello reply into its advertised capabilities."""
    header = struct.calcsize("<BBIIII")
    if len(payload) < header:
        raise ProtocolError("server hello truncated")
    status, kind, height, width, channels, steps = struct.unpack_from("<BBIIII", payload, 0)
    if status != STATUS_OK:
        raise ProtocolError("decode_server_hello called on a non-OK frame")
    if kind not in (KIND_SCORE, KIND_EPSILON):
        raise ProtocolError(f"unknown output kind {kind}")
    if len(payload) != header + 8 * steps:
        raise ProtocolError("server hello length does not match its schedule size")
    betas = np.frombuffer(payload, dtype="<f8", count=steps, offset=header).copy()
    return {
        "kind": kind,
        "height": height,
        "width": width,
        "channels": channels,
        "betas": betas,
    }


def encode_request(t: int, tensor: np.ndarray) -> bytes:
    return struct.pack("<I", t) + encode_tensor_block(tensor)


def decode_request(payload: bytes) -> tuple[int, np.ndarray]:
    if len(payload) < 4:
        raise ProtocolError("request truncated before timestep")
    t = struct.unpack_from("<I", payload, 0)[0]
    tensor, end = decode_tensor_block(payload, 4)
    if end != len(payload):
        raise ProtocolError("trailing bytes after request tensor block")
    return t, tensor


def encode_ok_response(tensor: np.ndarray) -> bytes:
    return struct.pack("<B", STATUS_OK) + encode_tensor_block(tensor)


def encode_error_response(status: int, message: str) -> bytes:
    raw = message.encode("utf-8")
    return struct.pack("<BI", status, len(raw)) + raw


def decode_server_response(payload: bytes) -> np.ndarray:
    """Decode an evaluate reply, raising the error a non-OK status carries."""
    if not payload:
        raise ProtocolError("empty server frame")
    status = payload[0]
    if status == STATUS_OK:
        tensor, end = decode_tensor_block(payload, 1)
        if end != len(payload):
            raise ProtocolError("trailing bytes after response tensor block")
        return tensor
    message = decode_error_message(payload)
    if status == STATUS_CAPABILITY_ERROR:
        from .errors import CapabilityError

        raise CapabilityError(message)
    raise ProtocolError(message)


def decode_error_message(payload: bytes) -> str:
    if len(payload) < 5:
        raise ProtocolError("error frame truncated")
    (n,) = struct.unpack_from("<I", payload, 1)
    if len(payload) != 5 + n:
        raise ProtocolError("error frame length mismatch")
    return payload[5 : 5 + n].decode("utf-8", errors="replace")


def send_frame(sock: socket.socket, payload: bytes) -> None:
    if len(payload) > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {len(payload)} bytes exceeds the protocol maximum")
    try:
        sock.sendall(struct.pack("<I", len(payload)) + payload)
    except OSError as exc:
        raise TransportError(f"send failed: {exc}") from exc


def recv_frame(sock: socket.socket) -> bytes:
    header = _recv_exact(sock, 4)
    (length,) = struct.unpack("<I", header)
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"peer announced a {length}-byte frame; refusing")
    return _recv_exact(sock, length)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        try:
            chunk = sock.recv(remaining)
        except OSError as exc:
            raise TransportError(f"recv failed: {exc}") from exc
        if not chunk:
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def write_conformance_vectors(path, tensors) -> None:
    """Write tensors as back-to-back tensor blocks (the shared fixture format)."""
    with open(path, "wb") as f:
        for arr in tensors:
            f.write(encode_tensor_block(arr))


def read_conformance_vectors(path) -> list[np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    tensors = []
    offset = 0
    while offset < len(buf):
        arr, offset = decode_tensor_block(buf, offset)
        tensors.append(arr)
    return tensors


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
