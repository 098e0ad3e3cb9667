"""Dense image tensors, normalization, finite differences, and PNG I/O.

Images are float64 arrays of shape (height, width, channels) with channels
in {1, 2, 3, 6}.  Gradient fields are float64 arrays of shape
(2, height, width, channels): component 0 holds horizontal forward
differences, component 1 vertical ones, both with periodic wrap-around.
The periodic boundary is load-bearing: it makes the difference operators
circulant, so the quadratic deconvolution step can be solved exactly with
2-D FFTs.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import FileFormatError, InputRangeError, ShapeError

VALID_CHANNELS = (1, 2, 3, 6)


def as_image(data: np.ndarray) -> np.ndarray:
    """Coerce ``data`` to a float64 (H, W, C) image array.

    2-D input is treated as single-channel.  Raises ShapeError for
    anything that is not a valid image shape.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    if arr.ndim != 3:
        raise ShapeError(f"expected (H, W, C) or (H, W) array, got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1:
        raise ShapeError(f"empty image: shape {arr.shape}")
    if c not in VALID_CHANNELS:
        raise ShapeError(f"channels must be one of {VALID_CHANNELS}, got {c}")
    return arr


def require_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} must have identical shapes, got {a.shape} vs {b.shape}")


def normalize(img: np.ndarray) -> np.ndarray:
    """Map samples from [0, 255] to [-1, 1] via s -> s / 127.5 - 1."""
    arr = as_image(img)
    if arr.min() < 0.0 or arr.max() > 255.0:
        raise InputRangeError(
            f"normalize expects samples in [0, 255], got [{arr.min()}, {arr.max()}]"
        )
    return arr / 127.5 - 1.0


def denormalize(img: np.ndarray) -> np.ndarray:
    """Map samples from [-1, 1] back to [0, 255]; exact inverse of normalize."""
    arr = as_image(img)
    if arr.min() < -1.0 or arr.max() > 1.0:
        raise InputRangeError(
            f"denormalize expects samples in [-1, 1], got [{arr.min()}, {arr.max()}]"
        )
    return (arr + 1.0) * 127.5


def broadcast_ir(ir: np.ndarray, channels: int) -> np.ndarray:
    """Replicate a single-channel image across ``channels`` identical planes.

    Needed so a 1-channel infrared image can be subtracted from a 3-channel
    visible image.
    """
    arr = as_image(ir)
    if arr.shape[2] != 1:
        raise ShapeError(f"broadcast_ir expects a single-channel image, got {arr.shape[2]}")
    if channels == 1:
        return arr.copy()
    if channels not in VALID_CHANNELS:
        raise ShapeError(f"cannot broadcast to {channels} channels")
    return np.repeat(arr, channels, axis=2)


def grad(img: np.ndarray) -> np.ndarray:
    """First-order forward differences with periodic boundary, per channel.

    Returns a field of shape (2, H, W, C); component 0 is the horizontal
    difference x[i, j+1] - x[i, j], component 1 the vertical one.
    """
    arr = as_image(img)
    dh = np.roll(arr, -1, axis=1) - arr
    dv = np.roll(arr, -1, axis=0) - arr
    return np.stack((dh, dv))


def div(field: np.ndarray) -> np.ndarray:
    """Divergence chosen as the negative adjoint of :func:`grad`.

    Satisfies <grad(x), u> = <x, -div(u)> exactly under the periodic
    boundary, which keeps the FFT deconvolution consistent with the
    spatial-domain operators.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 4 or field.shape[0] != 2:
        raise ShapeError(f"expected gradient field of shape (2, H, W, C), got {field.shape}")
    uh, uv = field[0], field[1]
    return (uh - np.roll(uh, 1, axis=1)) + (uv - np.roll(uv, 1, axis=0))


def read_png(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG as a float64 (H, W, C) array in [0, 255]."""
    with Image.open(path) as im:
        if im.format != "PNG":
            raise FileFormatError(f"{path}: expected PNG, got {im.format}")
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.float64)[:, :, np.newaxis]
        elif im.mode == "RGB":
            arr = np.asarray(im, dtype=np.float64)
        else:
            raise FileFormatError(
                f"{path}: unsupported PNG mode {im.mode!r}; only 8-bit L and RGB are read"
            )
    return arr


def write_png(path, img: np.ndarray) -> None:
    """Write a [0, 255] image as 8-bit PNG (grayscale for 1 channel, RGB for 3)."""
    arr = as_image(img)
    if arr.min() < 0.0 or arr.max() > 255.0:
        raise InputRangeError(
            f"write_png expects samples in [0, 255], got [{arr.min()}, {arr.max()}]"
        )
    quantized = np.rint(arr).astype(np.uint8)
    if arr.shape[2] == 1:
        im = Image.fromarray(quantized[:, :, 0], mode="L")
    elif arr.shape[2] == 3:
        im = Image.fromarray(quantized, mode="RGB")
    else:
        raise ShapeError(f"PNG output supports 1 or 3 channels, got {arr.shape[2]}")
    im.save(path, format="PNG")
