"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

# color per class for label visualisation; IGNORE is drawn white
PALETTE = np.array([
    [0, 0, 0],        # background
    [128, 64, 128],   # road
    [70, 130, 180],   # sky
    [70, 70, 70],     # building
    [0, 0, 142],      # vehicle
], dtype=np.uint8)
IGNORE_COLOR = np.array([255, 255, 255], dtype=np.uint8)


class NetpbmError(ValueError):
    pass


def _header(magic: bytes, w: int, h: int) -> bytes:
    return magic + b"\n%d %d\n255\n" % (w, h)


def write_pgm(path: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise NetpbmError(f"PGM needs a 2-D array, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_header(b"P5", arr.shape[1], arr.shape[0]))
        fh.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def write_ppm(path: str, rgb: np.ndarray) -> None:
    """``rgb`` is H x W x 3 uint8."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise NetpbmError(f"PPM needs an HxWx3 array, got shape {rgb.shape}")
    with open(path, "wb") as fh:
        fh.write(_header(b"P6", rgb.shape[1], rgb.shape[0]))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def _read(path: str) -> tuple[bytes, int, int, bytes]:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise NetpbmError(f"{path}: truncated header")
        tokens.append(data[start:pos])
    magic = tokens[0]
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise NetpbmError(f"{path}: only 8-bit files are supported (maxval {maxval})")
    return magic, w, h, data[pos + 1:]


def read_pgm(path: str) -> np.ndarray:
    magic, w, h, body = _read(path)
    if magic != b"P5":
        raise NetpbmError(f"{path}: not a binary PGM")
    if len(body) < w * h:
        raise NetpbmError(f"{path}: truncated pixel data")
    return np.frombuffer(body[:w * h], dtype=np.uint8).reshape(h, w).copy()


def read_ppm(path: str) -> np.ndarray:
    magic, w, h, body = _read(path)
    if magic != b"P6":
        raise NetpbmError(f"{path}: not a binary PPM")
    if len(body) < w * h * 3:
        raise NetpbmError(f"{path}: truncated pixel data")
    return np.frombuffer(body[:w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def image_to_rgb8(img: Tensor) -> np.ndarray:
    """3 x H x W float image in [0, 1] -> H x W x 3 uint8."""
    x = np.clip(np.asarray(img.data if isinstance(img, Tensor) else img), 0.0, 1.0)
    return np.rint(x.transpose(1, 2, 0) * 255.0).astype(np.uint8)


def rgb8_to_image(rgb: np.ndarray) -> Tensor:
    return Tensor(rgb.transpose(2, 0, 1).astype(np.float64) / 255.0)


def colorize(label: np.ndarray) -> np.ndarray:
    label = np.asarray(label)
    out = np.empty(label.shape + (3,), dtype=np.uint8)
    known = label < len(PALETTE)
    out[known] = PALETTE[label[known]]
    out[~known] = IGNORE_COLOR
    return out


def heatmap_to_gray(m: np.ndarray) -> np.ndarray:
    """Scale a non-negative map so its maximum is white. A constant map becomes mid gray."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.full(m.shape, 128, dtype=np.uint8)
    return np.rint(255.0 * (m - lo) / (hi - lo)).astype(np.uint8)
