"""Raster I/O: raw float32 mask files and PGM/PPM renders.

Mask payloads are raw little-endian 32-bit floats, row-major, without any
header; the dimensions travel in the manifest.  Binary masks and overlays
render to 8-bit PGM (P5) / PPM (P6) for human inspection.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_f32(path: str | Path, values: np.ndarray) -> None:
    """Write an array as raw little-endian float32, row-major."""
    arr = np.ascontiguousarray(np.asarray(values), dtype="<f4")
    Path(path).write_bytes(arr.tobytes())


def read_f32(path: str | Path, shape: tuple[int, ...]) -> np.ndarray:
    """Read a raw little-endian float32 file into the given shape (as float64)."""
    data = Path(path).read_bytes()
    expected = int(np.prod(shape)) * 4
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for shape {shape}, found {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float64)


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Quantize values in [0, 1] to uint8 levels 0..255 (round half away from zero)."""
    arr = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    """Write a 2-D uint8 array as binary PGM (P5)."""
    arr = np.ascontiguousarray(gray, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    """Write an HxWx3 uint8 array as binary PPM (P6)."""
    arr = np.ascontiguousarray(rgb, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"PPM needs an HxWx3 array, got shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def _read_netpbm(path: str | Path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != magic:
            raise ValueError(f"{path}: not a {magic.decode()} file")
        fields: list[int] = []
        while len(fields) < 3:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            if line.startswith(b"#"):
                continue
            fields.extend(int(tok) for tok in line.split())
        w, h, maxval = fields
        if maxval != 255:
            raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
        data = f.read(w * h * channels)
    arr = np.frombuffer(data, dtype=np.uint8)
    return arr.reshape((h, w) if channels == 1 else (h, w, channels))


def read_pgm(path: str | Path) -> np.ndarray:
    return _read_netpbm(path, b"P5", 1)


def read_ppm(path: str | Path) -> np.ndarray:
    return _read_netpbm(path, b"P6", 3)
