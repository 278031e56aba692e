"""Matrix-free linear degradation operators with exact adjoints.

Four measurement models: identity (denoising), Gaussian blur with reflect
boundary, random pixel-site inpainting, and average-pooling downsampling.
Every operator satisfies the dot-product test <Ax, u> == <x, A^T u> to
near machine precision; `adjoint_dot_test` certifies this.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import signal

from .errors import ArgumentError, DimensionError

__all__ = [
    "LinearOperator",
    "InpaintMask",
    "identity_op",
    "gaussian_kernel",
    "blur_op",
    "inpaint_op",
    "make_mask",
    "avgpool_sr_op",
    "adjoint_dot_test",
    "save_mask",
    "load_mask",
]


@dataclass(frozen=True)
class LinearOperator:
    """A degradation map with declared shapes and an exact adjoint."""

    domain_shape: tuple[int, int, int]
    range_shape: tuple[int, int, int]
    apply: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]

    @property
    def domain_size(self) -> int:
        h, w, c = self.domain_shape
        return h * w * c

    @property
    def range_size(self) -> int:
        h, w, c = self.range_shape
        return h * w * c


@dataclass(frozen=True)
class InpaintMask:
    """Retained pixel-site indices out of a total site count."""

    kept: np.ndarray = field(repr=False)
    total: int = 0

    def __post_init__(self):
        kept = np.asarray(self.kept, dtype=np.int64).ravel()
        if kept.size and (np.any(np.diff(kept) <= 0) or kept[0] < 0):
            raise DimensionError("mask indices must be strictly increasing and >= 0")
        if kept.size and kept[-1] >= self.total:
            raise DimensionError("mask index exceeds total site count")
        kept.setflags(write=False)
        object.__setattr__(self, "kept", kept)


def identity_op(shape) -> LinearOperator:
    shape = tuple(shape)
    return LinearOperator(shape, shape, lambda x: np.array(x, dtype=np.float64),
                          lambda u: np.array(u, dtype=np.float64))


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian kernel, symmetric under 180-degree rotation."""
    if size % 2 == 0 or size < 1:
        raise ArgumentError(f"kernel size must be odd and positive, got {size}")
    if sigma <= 0:
        raise ArgumentError(f"sigma must be positive, got {sigma}")
    c = (size - 1) / 2.0
    ax = np.arange(size) - c
    k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma**2))
    return k / k.sum()


def _reflect_indices(n: int, r: int) -> np.ndarray:
    # Single mirror-without-repeat reflection; valid only for r <= n - 1.
    idx = np.arange(-r, n + r)
    idx = np.where(idx < 0, -idx, idx)
    return np.where(idx >= n, 2 * n - 2 - idx, idx)


def blur_op(shape, size: int = 61, sigma: float = 3.0) -> LinearOperator:
    """Per-channel 2-D Gaussian convolution with reflect boundary handling.

    The adjoint is the true transpose of the padded-convolution map:
    a full convolution followed by folding the padded border back onto its
    reflection sources (plain correlation would be wrong at the boundary).
    """
    h, w, c = shape
    kernel = gaussian_kernel(size, sigma)
    r = (size - 1) // 2
    if r > h - 1 or r > w - 1:
        raise ArgumentError(
            f"{size}x{size} kernel needs reflection support of {r} pixels; "
            f"image is only {h}x{w}"
        )
    rows = _reflect_indices(h, r)
    cols = _reflect_indices(w, r)
    kflip = kernel[::-1, ::-1]

    def apply(x):
        grid = np.asarray(x, dtype=np.float64).reshape(h, w, c)
        out = np.empty_like(grid)
        for ch in range(c):
            padded = np.pad(grid[:, :, ch], r, mode="reflect")
            out[:, :, ch] = signal.fftconvolve(padded, kflip, mode="valid")
        return out.ravel()

    def adjoint(u):
        grid = np.asarray(u, dtype=np.float64).reshape(h, w, c)
        out = np.zeros((h, w, c))
        for ch in range(c):
            spread = signal.fftconvolve(grid[:, :, ch], kernel, mode="full")
            np.add.at(out[:, :, ch], (rows[:, None], cols[None, :]), spread)
        return out.ravel()

    return LinearOperator(tuple(shape), tuple(shape), apply, adjoint)


def make_mask(shape, missing_fraction: float, seed: int) -> InpaintMask:
    """Keep round((1-fraction)*sites) pixel sites, sampled without replacement."""
    if not 0.0 <= missing_fraction < 1.0:
        raise ArgumentError(f"missing fraction must be in [0, 1), got {missing_fraction}")
    h, w, _ = shape
    total = h * w
    n_keep = int(np.round((1.0 - missing_fraction) * total))
    rng = np.random.default_rng(seed)
    kept = np.sort(rng.choice(total, size=n_keep, replace=False))
    return InpaintMask(kept, total)


def inpaint_op(mask: InpaintMask, shape) -> LinearOperator:
    """Select the kept pixel sites (all channels of a site share fate)."""
    h, w, c = shape
    if mask.total != h * w:
        raise DimensionError(f"mask covers {mask.total} sites, image has {h * w}")
    entries = (mask.kept[:, None] * c + np.arange(c)[None, :]).ravel()
    n = h * w * c
    m = entries.size

    def apply(x):
        return np.asarray(x, dtype=np.float64)[entries]

    def adjoint(u):
        out = np.zeros(n)
        out[entries] = np.asarray(u, dtype=np.float64)
        return out

    return LinearOperator(tuple(shape), (m // c, 1, c), apply, adjoint)


def avgpool_sr_op(shape, factor: int = 4) -> LinearOperator:
    """Average-pooling downsampler; adjoint replicates scaled by 1/factor^2."""
    h, w, c = shape
    f = int(factor)
    if f < 1 or h % f or w % f:
        raise DimensionError(f"image {h}x{w} not divisible by pooling factor {f}")
    hf, wf = h // f, w // f

    def apply(x):
        grid = np.asarray(x, dtype=np.float64).reshape(hf, f, wf, f, c)
        return grid.mean(axis=(1, 3)).ravel()

    def adjoint(u):
        grid = np.asarray(u, dtype=np.float64).reshape(hf, wf, c)
        out = np.repeat(np.repeat(grid, f, axis=0), f, axis=1) / (f * f)
        return out.ravel()

    return LinearOperator(tuple(shape), (hf, wf, c), apply, adjoint)


def adjoint_dot_test(op: LinearOperator, trials: int = 10, seed: int = 0) -> float:
    """Max relative residual of <Ax, u> - <x, A^T u> over seeded Gaussian pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.domain_size)
        u = rng.standard_normal(op.range_size)
        ax = op.apply(x)
        atu = op.adjoint(u)
        num = abs(float(ax @ u) - float(x @ atu))
        den = float(np.linalg.norm(ax) * np.linalg.norm(u)) + np.finfo(float).tiny
        worst = max(worst, num / den)
    return worst


def save_mask(mask: InpaintMask, path) -> None:
    """Line-oriented text format: "mask v1 <total>" then one index per line."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"mask v1 {mask.total}\n")
        for idx in mask.kept:
            fh.write(f"{idx}\n")


def load_mask(path) -> InpaintMask:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "mask" or header[1] != "v1":
            raise DimensionError(f"{path}: not a v1 mask file")
        total = int(header[2])
        kept = [int(line) for line in fh if line.strip()]
    return InpaintMask(np.asarray(kept, dtype=np.int64), total)
