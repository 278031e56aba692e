"""PSNR and SSIM fidelity metrics.

SSIM uses the universal parameterization: 11x11 Gaussian window with
sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range L = 1, reflect boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ArgumentError, DimensionError
from .image import Image
from .operators import gaussian_kernel

__all__ = ["MetricReport", "psnr", "ssim", "evaluate"]


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    per_channel: dict

    def to_dict(self) -> dict:
        def enc(v):
            return "inf" if math.isinf(v) else v
        return {
            "psnr_db": enc(self.psnr_db),
            "ssim": self.ssim,
            "per_channel": {
                "psnr_db": [enc(v) for v in self.per_channel["psnr_db"]],
                "ssim": list(self.per_channel["ssim"]),
            },
        }


def _check_shapes(ref: Image, test: Image):
    if ref.shape != test.shape:
        raise DimensionError(f"shape mismatch: {ref.shape} vs {test.shape}")


def _psnr_from_mse(mse: float, peak: float) -> float:
    if mse == 0.0:
        return math.inf
    return float(10.0 * np.log10(peak**2 / mse))


def psnr(ref: Image, test: Image, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) over all entries; inf for identical images."""
    _check_shapes(ref, test)
    mse = float(np.mean((ref.data - test.data) ** 2))
    return _psnr_from_mse(mse, peak)


def _ssim_channel(x: np.ndarray, y: np.ndarray, kernel: np.ndarray,
                  c1: float, c2: float) -> float:
    def smooth(img):
        return ndimage.correlate(img, kernel, mode="mirror")

    mu_x = smooth(x)
    mu_y = smooth(y)
    var_x = smooth(x * x) - mu_x**2
    var_y = smooth(y * y) - mu_y**2
    cov = smooth(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(ref: Image, test: Image, window: int = 11, win_sigma: float = 1.5,
         K1: float = 0.01, K2: float = 0.03, L: float = 1.0) -> float:
    """Mean structural similarity with Gaussian-weighted local moments."""
    _check_shapes(ref, test)
    if min(ref.height, ref.width) < window:
        raise ArgumentError(
            f"image {ref.height}x{ref.width} smaller than SSIM window {window}")
    kernel = gaussian_kernel(window, win_sigma)
    c1 = (K1 * L) ** 2
    c2 = (K2 * L) ** 2
    a = ref.grid()
    b = test.grid()
    vals = [_ssim_channel(a[:, :, ch], b[:, :, ch], kernel, c1, c2)
            for ch in range(ref.channels)]
    return float(np.mean(vals))


def evaluate(ref: Image, test: Image, peak: float = 1.0) -> MetricReport:
    """Full metric report with per-channel breakdown."""
    _check_shapes(ref, test)
    a = ref.grid()
    b = test.grid()
    per_psnr = []
    per_ssim = []
    kernel = gaussian_kernel(11, 1.5)
    small = min(ref.height, ref.width) < 11
    for ch in range(ref.channels):
        mse = float(np.mean((a[:, :, ch] - b[:, :, ch]) ** 2))
        per_psnr.append(_psnr_from_mse(mse, peak))
        if not small:
            per_ssim.append(_ssim_channel(a[:, :, ch], b[:, :, ch], kernel,
                                          1e-4, 9e-4))
    return MetricReport(
        psnr_db=psnr(ref, test, peak),
        ssim=ssim(ref, test) if not small else float("nan"),
        per_channel={"psnr_db": per_psnr, "ssim": per_ssim},
    )
