"""DDPM-style noise schedule and the solver's decreasing perturbation.

The schedule stores per-step rates beta_i and cumulative products
alpha_i = prod_{j<=i}(1 - beta_j).  The solver's effective noise level at
index t is eta_t = (1 - alpha_t) / alpha_t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError

__all__ = [
    "DiffusionSchedule",
    "PerturbationSchedule",
    "linear_beta_schedule",
    "eta",
    "subsample_timesteps",
    "epsilon_at",
]


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64).ravel()
        alphas = np.asarray(self.alphas, dtype=np.float64).ravel()
        if betas.size == 0 or betas.size != alphas.size:
            raise ArgumentError("betas and alphas must be equal-length, nonempty")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ArgumentError("every beta must lie in (0, 1)")
        if np.any(alphas <= 0) or np.any(alphas >= 1):
            raise ArgumentError("every alpha must lie in (0, 1)")
        if np.any(np.diff(alphas) >= 0):
            raise ArgumentError("alphas must be strictly decreasing")
        if not np.allclose(alphas, np.cumprod(1.0 - betas), rtol=1e-12, atol=0):
            raise ArgumentError("alphas do not match the running product of 1-beta")
        for name, arr in (("betas", betas), ("alphas", alphas)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_steps(self) -> int:
        return self.betas.size


@dataclass(frozen=True)
class PerturbationSchedule:
    """Geometric decay with a floor: eps_k = max(eps_min, eps0 * decay^k)."""

    eps0: float = 1e-2
    decay: float = 0.8
    eps_min: float = 1e-8

    def __post_init__(self):
        if self.eps0 <= 0 or self.eps_min <= 0:
            raise ArgumentError("perturbations must be positive")
        if self.eps_min > self.eps0:
            raise ArgumentError("eps_min must not exceed eps0")
        if not 0.0 < self.decay < 1.0:
            raise ArgumentError(f"decay must lie in (0, 1), got {self.decay}")


def linear_beta_schedule(n: int = 1000, beta_start: float = 1e-4,
                         beta_end: float = 0.02) -> DiffusionSchedule:
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ArgumentError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )
    betas = np.linspace(beta_start, beta_end, n)
    return DiffusionSchedule(betas, np.cumprod(1.0 - betas))


def eta(schedule: DiffusionSchedule, t: int) -> float:
    """Noise variance ratio (1 - alpha_t) / alpha_t, increasing in t."""
    if not 0 <= t < schedule.num_steps:
        raise IndexError(f"schedule index {t} out of range [0, {schedule.num_steps})")
    a = schedule.alphas[t]
    return float((1.0 - a) / a)


def subsample_timesteps(n: int, t_outer: int) -> np.ndarray:
    """Evenly spaced schedule indices from n-1 down to 0, both ends included."""
    if not 1 <= t_outer <= n:
        raise ArgumentError(f"need 1 <= T <= N, got T={t_outer}, N={n}")
    ts = np.round(np.linspace(n - 1, 0, t_outer)).astype(np.int64)
    if ts.size > 1 and np.any(np.diff(ts) >= 0):
        raise ArgumentError("subsampled indices are not strictly decreasing")
    return ts


def epsilon_at(ps: PerturbationSchedule, k: int) -> float:
    if k < 0:
        raise ArgumentError(f"iteration ordinal must be >= 0, got {k}")
    return max(ps.eps_min, ps.eps0 * ps.decay**k)
