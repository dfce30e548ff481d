"""Reading/writing 8-bit binary PGM (P5) and PPM (P6) files."""

from __future__ import annotations

import numpy as np


def _read_token(fh):
    # tokens are whitespace-separated; '#' starts a comment to end of line
    tok = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise ValueError("truncated netpbm header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def read_image(path) -> np.ndarray:
    """Read a P5/P6 file into a (C, H, W) float array in [0, 1]."""
    with open(path, "rb") as fh:
        magic = _read_token(fh)
        if magic not in (b"P5", b"P6"):
            raise ValueError(f"unsupported netpbm magic {magic!r} (need binary P5 or P6)")
        width = int(_read_token(fh))
        height = int(_read_token(fh))
        maxval = int(_read_token(fh))
        if maxval != 255:
            raise ValueError(f"only 8-bit files supported, maxval={maxval}")
        channels = 1 if magic == b"P5" else 3
        raw = fh.read(width * height * channels)
    if len(raw) != width * height * channels:
        raise ValueError("truncated pixel data")
    arr = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return arr.reshape(1, height, width)
    return arr.reshape(height, width, 3).transpose(2, 0, 1)


def write_pgm(path, plane: np.ndarray, rescale: bool = True):
    """Write one plane as binary PGM; by default min/max rescaled to 0..255."""
    plane = np.asarray(plane, dtype=np.float64)
    if rescale:
        lo, hi = plane.min(), plane.max()
        scaled = np.zeros_like(plane) if hi <= lo else (plane - lo) / (hi - lo)
    else:
        scaled = np.clip(plane, 0.0, 1.0)
    pix = np.round(scaled * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{plane.shape[1]} {plane.shape[0]}\n255\n".encode())
        fh.write(pix.tobytes())


def write_ppm(path, rgb: np.ndarray):
    """Write a (3, H, W) array in [0, 1] as binary PPM."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"expected (3, H, W), got {rgb.shape}")
    pix = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{rgb.shape[2]} {rgb.shape[1]}\n255\n".encode())
        fh.write(pix.transpose(1, 2, 0).tobytes())
