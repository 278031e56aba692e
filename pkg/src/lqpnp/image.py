"""Image container and lossless 8-bit PNG I/O.

Pixel data is stored as a flat float64 vector, row-major and
channel-interleaved, with nominal intensity range [0, 1].  Values may leave
the range during iteration; clamping happens only when writing to disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import ArgumentError, DecodeError, DimensionError

__all__ = [
    "Image",
    "load_image",
    "save_image",
    "constant_image",
    "as_vector",
    "from_vector",
]


@dataclass(frozen=True)
class Image:
    """An H x W x C grid of real intensities."""

    height: int
    width: int
    channels: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise DimensionError(f"bad image size {self.height}x{self.width}")
        if self.channels not in (1, 3):
            raise ArgumentError(f"channels must be 1 or 3, got {self.channels}")
        data = np.ascontiguousarray(self.data, dtype=np.float64).ravel()
        if data.size != self.height * self.width * self.channels:
            raise DimensionError(
                f"data length {data.size} != "
                f"{self.height}*{self.width}*{self.channels}"
            )
        if not np.all(np.isfinite(data)):
            raise ArgumentError("image data contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    def grid(self) -> np.ndarray:
        """Read-only (H, W, C) view of the pixel data."""
        return self.data.reshape(self.height, self.width, self.channels)


def load_image(path) -> Image:
    """Read an 8-bit grayscale or RGB PNG, mapping intensities to [0, 1]."""
    try:
        with PILImage.open(path) as pil:
            if pil.format != "PNG":
                raise DecodeError(f"{path}: not a PNG file (format={pil.format})")
            if pil.mode not in ("L", "RGB"):
                raise DecodeError(
                    f"{path}: unsupported PNG mode {pil.mode!r} "
                    "(need 8-bit grayscale or RGB)"
                )
            arr = np.asarray(pil, dtype=np.float64)
    except (OSError, UnidentifiedImageError) as exc:
        raise DecodeError(f"{path}: cannot decode ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    return Image(h, w, c, arr.ravel() / 255.0)


def save_image(img: Image, path) -> None:
    """Write as 8-bit PNG: clamp to [0, 1], quantize with round-half-away."""
    grid = np.clip(img.grid(), 0.0, 1.0)
    bytes_ = np.floor(grid * 255.0 + 0.5).astype(np.uint8)
    if img.channels == 1:
        pil = PILImage.fromarray(bytes_[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(bytes_, mode="RGB")
    pil.save(path, format="PNG")


def constant_image(h: int, w: int, c: int, value: float) -> Image:
    return Image(h, w, c, np.full(h * w * c, float(value)))


def as_vector(img: Image) -> np.ndarray:
    """Copy of the pixel data as a writable flat vector."""
    return img.data.copy()


def from_vector(vec, shape: tuple[int, int, int]) -> Image:
    h, w, c = shape
    vec = np.asarray(vec, dtype=np.float64).ravel()
    if vec.size != h * w * c:
        raise DimensionError(f"vector length {vec.size} does not fit shape {shape}")
    return Image(h, w, c, vec)
