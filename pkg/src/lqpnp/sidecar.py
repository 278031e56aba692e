"""Float64 measurement sidecar files.

PNG previews quantize to 8 bits; the sidecar carries exact measurement
values so the solver input is never degraded.  Layout: an 8-value float64
little-endian header [magic, h, w, c, 0, 0, 0, 0] followed by h*w*c
float64 values.  The magic is 0x4C51524157 ("LQRAW").
"""

from __future__ import annotations

import numpy as np

from .errors import DecodeError, DimensionError

__all__ = ["write_sidecar", "read_sidecar", "SIDECAR_MAGIC"]

SIDECAR_MAGIC = float(0x4C51524157)
_HEADER_VALUES = 8


def write_sidecar(path, vec, shape) -> None:
    h, w, c = (int(v) for v in shape)
    vec = np.asarray(vec, dtype=np.float64).ravel()
    if vec.size != h * w * c:
        raise DimensionError(f"vector length {vec.size} does not fit shape {shape}")
    header = np.zeros(_HEADER_VALUES, dtype="<f8")
    header[:4] = [SIDECAR_MAGIC, h, w, c]
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(vec.astype("<f8").tobytes())


def read_sidecar(path):
    """Returns (values, (h, w, c))."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 * _HEADER_VALUES:
        raise DecodeError(f"{path}: truncated sidecar header")
    header = np.frombuffer(raw[: 8 * _HEADER_VALUES], dtype="<f8")
    if header[0] != SIDECAR_MAGIC:
        raise DecodeError(f"{path}: bad sidecar magic {header[0]!r}")
    h, w, c = (int(v) for v in header[1:4])
    vec = np.frombuffer(raw[8 * _HEADER_VALUES:], dtype="<f8").copy()
    if vec.size != h * w * c:
        raise DecodeError(f"{path}: payload length {vec.size} does not match "
                          f"header shape ({h}, {w}, {c})")
    return vec, (h, w, c)
