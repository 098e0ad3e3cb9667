"""Server-side codec for the score wire protocol.

Implemented independently of the engine's client codec on purpose: the
two sides are pinned against each other only through the shared binary
conformance vectors, so any byte-level drift fails a fixture instead of
silently round-tripping.

Layout (all integers little-endian):

    frame          := u32 payload_length | payload
    client hello   := b"DDFM" | u32 version
    server frames  := u8 status | body
        status 0 hello body: u8 kind | u32 height | u32 width |
                             u32 channels | u32 T | T x f64 beta
        status 0 reply body: tensor_block
        status 1 / 2 body:   u32 n | n bytes UTF-8 message
    request        := u32 t | tensor_block        (t is the 1-based step)
    tensor_block   := u32 h | u32 w | u32 c | h*w*c x f32 row-major,
                      channel-interleaved
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DDFM"
VERSION = 1

KIND_SCORE = 0
KIND_EPSILON = 1

STATUS_OK = 0
STATUS_PROTOCOL_ERROR = 1
STATUS_CAPABILITY_ERROR = 2

MAX_FRAME_BYTES = 1 << 30

_HELLO_HEADER = struct.Struct("<BBIIII")


class WireError(ValueError):
    """Malformed bytes on the wire."""


def read_frame(stream) -> bytes:
    header = _read_exact(stream, 4)
    (length,) = struct.unpack("<I", header)
    if length > MAX_FRAME_BYTES:
        raise WireError(f"peer announced a {length}-byte frame")
    return _read_exact(stream, length)


def write_frame(stream, payload: bytes) -> None:
    stream.sendall(struct.pack("<I", len(payload)) + payload)


def _read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.recv(remaining)
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def parse_client_hello(payload: bytes) -> int:
    if len(payload) != 8 or payload[:4] != MAGIC:
        raise WireError("expected DDFM magic + u32 version")
    return struct.unpack_from("<I", payload, 4)[0]


def hello_reply(kind: int, height: int, width: int, channels: int, betas: np.ndarray) -> bytes:
    betas = np.ascontiguousarray(betas, dtype="<f8")
    return _HELLO_HEADER.pack(STATUS_OK, kind, height, width, channels, betas.size) + betas.tobytes()


def error_reply(status: int, message: str) -> bytes:
    raw = message.encode("utf-8")
    return struct.pack("<BI", status, len(raw)) + raw


def parse_request(payload: bytes) -> tuple[int, np.ndarray]:
    if len(payload) < 4:
        raise WireError("request truncated before the step index")
    (t,) = struct.unpack_from("<I", payload, 0)
    tensor, end = parse_tensor_block(payload, 4)
    if end != len(payload):
        raise WireError("trailing bytes after the request tensor")
    return t, tensor


def tensor_reply(tensor: np.ndarray) -> bytes:
    return struct.pack("<B", STATUS_OK) + pack_tensor_block(tensor)


def pack_tensor_block(tensor: np.ndarray) -> bytes:
    if tensor.ndim != 3:
        raise WireError(f"tensor block needs an (H, W, C) array, got {tensor.shape}")
    h, w, c = tensor.shape
    return struct.pack("<III", h, w, c) + np.ascontiguousarray(tensor, dtype="<f4").tobytes()


def parse_tensor_block(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(buf) - offset < 12:
        raise WireError("tensor block truncated before its header")
    h, w, c = struct.unpack_from("<III", buf, offset)
    offset += 12
    count = h * w * c
    if h < 1 or w < 1 or c < 1 or count > MAX_FRAME_BYTES // 4:
        raise WireError(f"implausible tensor dimensions {h}x{w}x{c}")
    nbytes = 4 * count
    if len(buf) - offset < nbytes:
        raise WireError("tensor block payload truncated")
    flat = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    return flat.reshape(h, w, c).astype(np.float64), offset + nbytes


def read_vector_file(path) -> list[np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    tensors = []
    offset = 0
    while offset < len(buf):
        tensor, offset = parse_tensor_block(buf, offset)
        tensors.append(tensor)
    return tensors
