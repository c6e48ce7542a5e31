"""Binary PPM (P6) / PGM (P5) reading and writing, maxval 255."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_ppm(path, image: np.ndarray):
    """image: (3, H, W) floats in [0,1]; values are clamped then rounded."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3,H,W) image, got {image.shape}")
    _, h, w = image.shape
    pixels = np.rint(255.0 * np.clip(image, 0.0, 1.0)).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(pixels.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    """Returns (3, H, W) floats in [0,1]."""
    w, h, data = _read_netpbm(path, b"P6")
    arr = np.frombuffer(data, dtype=np.uint8, count=3 * w * h)
    return arr.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def write_pgm(path, values: np.ndarray):
    """values: (H, W) integers in [0,255]."""
    if values.ndim != 2:
        raise ValueError(f"expected (H,W) map, got {values.shape}")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(values.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    """Returns (H, W) uint8."""
    w, h, data = _read_netpbm(path, b"P5")
    return np.frombuffer(data, dtype=np.uint8, count=w * h).reshape(h, w).copy()


def _read_netpbm(path, magic: bytes):
    raw = Path(path).read_bytes()
    if not raw.startswith(magic):
        raise ValueError(f"{path}: expected {magic.decode()} file")
    fields, pos = [], len(magic)
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    return w, h, raw[pos:]
