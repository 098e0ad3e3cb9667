"""Regenerate the shared wire-protocol conformance vectors.

The binary file is back-to-back tensor blocks; the JSON sidecar pins the
file digest, per-block shapes and digests, and a few sampled values so an
independent implementation can verify decoded content, not just framing.
Both the engine client and the bridge server test suites consume these
fixtures byte-for-byte.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
BIN_PATH = HERE / "score_wire_v1.bin"
JSON_PATH = HERE / "score_wire_v1.json"


def encode_block(arr: np.ndarray) -> bytes:
    h, w, c = arr.shape
    return struct.pack("<III", h, w, c) + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def build_tensors() -> list[np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(0xDDF0))
    tensors = [
        np.zeros((1, 1, 1), dtype=np.float32),
        np.array([[[1.0], [-1.0], [0.5]], [[-0.25], [255.0], [-3.5]]], dtype=np.float32),
        rng.standard_normal((4, 4, 3)).astype(np.float32),
        (rng.uniform(-1, 1, (8, 8, 3)) * 3).astype(np.float32),
        rng.standard_normal((3, 5, 3)).astype(np.float32),
    ]
    return tensors


def main() -> None:
    tensors = build_tensors()
    blocks = [encode_block(t) for t in tensors]
    BIN_PATH.write_bytes(b"".join(blocks))
    meta = {
        "format": "score-wire-v1 tensor blocks, little-endian, f32 row-major channel-interleaved",
        "file_sha256": hashlib.sha256(BIN_PATH.read_bytes()).hexdigest(),
        "blocks": [
            {
                "shape": list(t.shape),
                "sha256": hashlib.sha256(b).hexdigest(),
                "corner_values": [
                    float(t[0, 0, 0]),
                    float(t[-1, -1, -1]),
                ],
                "sum": float(np.float32(t.sum(dtype=np.float64))),
            }
            for t, b in zip(tensors, blocks)
        ],
    }
    JSON_PATH.write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {BIN_PATH.name} ({BIN_PATH.stat().st_size} bytes) and {JSON_PATH.name}")


if __name__ == "__main__":
    main()
