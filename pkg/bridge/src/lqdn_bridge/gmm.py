"""Posterior-mean denoiser for a pixelwise scalar Gaussian mixture.

For a clean-value prior sum_k pi_k N(mu_k, s_k^2) and an observation
v = sqrt(a) x + sqrt(1-a) z, the exact posterior mean is the
responsibility-weighted blend of per-component conjugate means:

    E[x | v] = sum_k r_k(v) * (mu_k + g_k (v - sqrt(a) mu_k)),
    g_k = sqrt(a) s_k^2 / (a s_k^2 + 1 - a),
    r_k(v) ~ pi_k N(v; sqrt(a) mu_k, a s_k^2 + 1 - a).
"""

from __future__ import annotations

import numpy as np

DEFAULT_WEIGHTS = (0.5, 0.5)
DEFAULT_MEANS = (0.15, 0.85)
DEFAULT_VARIANCES = (0.0004, 0.0004)


class MixtureDenoiser:
    def __init__(self, weights=DEFAULT_WEIGHTS, means=DEFAULT_MEANS,
                 variances=DEFAULT_VARIANCES):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.variances = np.asarray(variances, dtype=np.float64)
        if not (self.weights.size == self.means.size == self.variances.size):
            raise ValueError("mixture parameter lengths differ")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")

    def posterior_mean(self, v: np.ndarray, alpha: float) -> np.ndarray:
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
        v = np.asarray(v, dtype=np.float64)
        root_a = np.sqrt(alpha)
        marg_var = alpha * self.variances + (1.0 - alpha)
        gain = root_a * self.variances / marg_var
        # responsibilities in log space for stability far from the means
        log_r = (np.log(self.weights) - 0.5 * np.log(2.0 * np.pi * marg_var)
                 - (v[..., None] - root_a * self.means) ** 2 / (2.0 * marg_var))
        log_r -= log_r.max(axis=-1, keepdims=True)
        resp = np.exp(log_r)
        resp /= resp.sum(axis=-1, keepdims=True)
        comp_mean = self.means + gain * (v[..., None] - root_a * self.means)
        return np.sum(resp * comp_mean, axis=-1)
