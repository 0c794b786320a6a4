"""Minimal 8-bit Netpbm support: read P2/P3/P5/P6, write P5/P6."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class NetpbmError(ValueError):
    pass


def _tokens(data: bytes, count: int, pos: int):
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise NetpbmError("truncated header")
        out.append(data[start:pos])
    return out, pos


def read(path) -> np.ndarray:
    """Return uint8 (H, W) for graymaps or (H, W, 3) for pixmaps."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise NetpbmError(f"{path}: unsupported netpbm magic {magic!r}")
    (w, h, maxval), pos = _tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 256:
        raise NetpbmError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = w * h * channels
    if magic in (b"P5", b"P6"):
        pos += 1  # single whitespace byte after maxval
        raw = data[pos:pos + count]
        if len(raw) != count:
            raise NetpbmError(f"{path}: truncated pixel data")
        arr = np.frombuffer(raw, dtype=np.uint8).copy()
    else:
        vals, _ = _tokens(data, count, pos)
        arr = np.array([int(v) for v in vals], dtype=np.int64)
        if arr.max(initial=0) > maxval:
            raise NetpbmError(f"{path}: sample exceeds maxval")
        arr = arr.astype(np.uint8)
    if maxval != 255:
        arr = np.rint(arr.astype(np.float64) * 255.0 / maxval).astype(np.uint8)
    return arr.reshape((h, w, 3) if channels == 3 else (h, w))


def write(path, image) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise NetpbmError("image must be uint8")
    if img.ndim == 2:
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n"
    else:
        raise NetpbmError(f"cannot write image of shape {img.shape}")
    Path(path).write_bytes(header.encode("ascii") + np.ascontiguousarray(img).tobytes())


def to_chw(image: np.ndarray) -> np.ndarray:
    """uint8 (H, W[, 3]) -> float (C, H, W) scaled to [0, 1]."""
    img = np.asarray(image, dtype=np.float64) / 255.0
    return img[None] if img.ndim == 2 else np.transpose(img, (2, 0, 1))


def from_chw(image: np.ndarray) -> np.ndarray:
    img = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    return img[0] if img.shape[0] == 1 else np.transpose(img, (1, 2, 0))
