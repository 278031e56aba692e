"""Pluggable posterior-mean denoisers and the renoising step.

A denoiser maps a noised iterate x' at schedule index t to an estimate of
the clean signal.  The analytic Gaussian-mixture denoiser carries the
regularization in closed form (exact score and diagonal Jacobian), which
makes the whole solver verifiable without pretrained networks; classical
TV/median baselines and a wire-protocol client for external model servers
round out the zoo.
"""

from __future__ import annotations

import os
import select
import socket
import struct
import subprocess
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ArgumentError, TransportError
from .schedule import DiffusionSchedule, eta

__all__ = [
    "Denoiser",
    "GmmPrior",
    "ExternalDenoiserEndpoint",
    "tweedie_from_noise_pred",
    "gmm_marginal_score",
    "gmm_denoiser",
    "tv_denoiser",
    "median_denoiser",
    "renoise",
    "external_denoiser",
    "two_level_prior",
    "MAGIC_REQUEST",
    "MAGIC_OK",
    "MAGIC_ERROR",
]


class Denoiser:
    """Posterior-mean estimator interface: denoise(x', t) -> x0 estimate.

    Analytic denoisers additionally expose diag_jacobian(x', t), the
    per-entry derivative of the output with respect to the input.
    """

    def denoise(self, x: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError


def tweedie_from_noise_pred(x, eps_pred, alpha_t: float) -> np.ndarray:
    """Posterior-mean estimate (x - sqrt(1-a) * eps_pred) / sqrt(a)."""
    if not 0.0 < alpha_t < 1.0:
        raise ArgumentError(f"alpha_t must lie in (0, 1), got {alpha_t}")
    x = np.asarray(x, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    if x.shape != eps_pred.shape:
        raise ArgumentError("x and eps_pred shapes differ")
    return (x - np.sqrt(1.0 - alpha_t) * eps_pred) / np.sqrt(alpha_t)


@dataclass(frozen=True)
class GmmPrior:
    """Pixel-independent scalar Gaussian mixture applied to every entry."""

    weights: np.ndarray = field(repr=False)
    means: np.ndarray = field(repr=False)
    variances: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("weights", "means", "variances"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        k = self.weights.size
        if k == 0 or self.means.size != k or self.variances.size != k:
            raise ArgumentError("weights, means, variances must be equal-length")
        if np.any(self.weights <= 0):
            raise ArgumentError("mixture weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ArgumentError("mixture weights must sum to 1")
        if np.any(self.variances <= 0):
            raise ArgumentError("mixture variances must be positive")

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        comp = rng.choice(self.weights.size, size=n, p=self.weights)
        return self.means[comp] + np.sqrt(self.variances[comp]) * rng.standard_normal(n)


def two_level_prior(low: float = 0.15, high: float = 0.85,
                    sigma: float = 0.02) -> GmmPrior:
    """Equal-weight two-component prior for piecewise-constant test worlds."""
    return GmmPrior(np.array([0.5, 0.5]), np.array([low, high]),
                    np.array([sigma**2, sigma**2]))


def _gmm_log_responsibilities(v, prior, alpha_t):
    # Marginal of sqrt(a) x0 + sqrt(1-a) z:
    # components N(sqrt(a) mu_k, a sig_k^2 + (1-a)).
    m = np.sqrt(alpha_t) * prior.means
    s2 = alpha_t * prior.variances + (1.0 - alpha_t)
    v = np.asarray(v, dtype=np.float64)
    logs = (np.log(prior.weights) - 0.5 * np.log(2.0 * np.pi * s2)
            - (v[..., None] - m) ** 2 / (2.0 * s2))
    logs -= logs.max(axis=-1, keepdims=True)
    resp = np.exp(logs)
    resp /= resp.sum(axis=-1, keepdims=True)
    return resp, m, s2


def gmm_marginal_score(v, prior: GmmPrior, alpha_t: float):
    """d/dv log p_t(v) for the exact noised-mixture marginal at alpha_t."""
    scalar = np.ndim(v) == 0
    resp, m, s2 = _gmm_log_responsibilities(np.atleast_1d(v), prior, alpha_t)
    score = np.sum(resp * (-(np.atleast_1d(v)[..., None] - m) / s2), axis=-1)
    return float(score[0]) if scalar else score


def _gmm_score_and_derivative(v, prior, alpha_t):
    resp, m, s2 = _gmm_log_responsibilities(v, prior, alpha_t)
    a = -(v[..., None] - m) / s2
    score = np.sum(resp * a, axis=-1)
    # d score/dv = sum_k r_k (a_k^2 - 1/s_k^2) - score^2
    deriv = np.sum(resp * (a**2 - 1.0 / s2), axis=-1) - score**2
    return score, deriv


class _GmmDenoiser(Denoiser):
    def __init__(self, prior: GmmPrior, schedule: DiffusionSchedule):
        self.prior = prior
        self.schedule = schedule

    def denoise(self, x, t):
        a = self.schedule.alphas[t]
        x = np.asarray(x, dtype=np.float64)
        score = gmm_marginal_score(x, self.prior, a)
        return (x + (1.0 - a) * score) / np.sqrt(a)

    def diag_jacobian(self, x, t):
        a = self.schedule.alphas[t]
        x = np.asarray(x, dtype=np.float64)
        _, deriv = _gmm_score_and_derivative(x, self.prior, a)
        return (1.0 + (1.0 - a) * deriv) / np.sqrt(a)


def gmm_denoiser(prior: GmmPrior, schedule: DiffusionSchedule) -> Denoiser:
    """Exact Tweedie posterior mean under a pixel-independent Gaussian mixture."""
    return _GmmDenoiser(prior, schedule)


def _tv_prox_channel(v: np.ndarray, weight: float, iters: int) -> np.ndarray:
    # Chambolle dual projection for argmin 0.5||x-v||^2 + weight*TV(x),
    # isotropic TV with forward differences, tau = 0.25.
    px = np.zeros_like(v)
    py = np.zeros_like(v)
    tau = 0.25
    for _ in range(iters):
        div = np.zeros_like(v)
        div[:-1, :] += px[:-1, :]
        div[1:, :] -= px[:-1, :]
        div[:, :-1] += py[:, :-1]
        div[:, 1:] -= py[:, :-1]
        u = div - v / weight
        gx = np.zeros_like(v)
        gy = np.zeros_like(v)
        gx[:-1, :] = u[1:, :] - u[:-1, :]
        gy[:, :-1] = u[:, 1:] - u[:, :-1]
        mag = np.sqrt(gx**2 + gy**2)
        px = (px + tau * gx) / (1.0 + tau * mag)
        py = (py + tau * gy) / (1.0 + tau * mag)
    div = np.zeros_like(v)
    div[:-1, :] += px[:-1, :]
    div[1:, :] -= px[:-1, :]
    div[:, :-1] += py[:, :-1]
    div[:, 1:] -= py[:, :-1]
    return v - weight * div


class _TvDenoiser(Denoiser):
    def __init__(self, strength, shape, schedule, inner_iters):
        if strength < 0:
            raise ArgumentError(f"TV strength must be >= 0, got {strength}")
        self.strength = float(strength)
        self.shape = tuple(shape)
        self.schedule = schedule
        self.inner_iters = int(inner_iters)

    def denoise(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        if self.strength == 0.0:
            return x.copy()
        h, w, c = self.shape
        weight = self.strength * eta(self.schedule, t)
        grid = x.reshape(h, w, c)
        out = np.empty_like(grid)
        for ch in range(c):
            out[:, :, ch] = _tv_prox_channel(grid[:, :, ch], weight, self.inner_iters)
        return out.ravel()


def tv_denoiser(strength: float, shape, schedule: DiffusionSchedule,
                inner_iters: int = 30) -> Denoiser:
    """Approximate proximal operator of strength*TV at the noise level of t."""
    return _TvDenoiser(strength, shape, schedule, inner_iters)


class _MedianDenoiser(Denoiser):
    def __init__(self, window, shape):
        if window % 2 == 0 or window < 1:
            raise ArgumentError(f"median window must be odd, got {window}")
        self.window = int(window)
        self.shape = tuple(shape)

    def denoise(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        if self.window == 1:
            return x.copy()
        h, w, c = self.shape
        grid = x.reshape(h, w, c)
        out = np.empty_like(grid)
        for ch in range(c):
            out[:, :, ch] = ndimage.median_filter(
                grid[:, :, ch], size=self.window, mode="mirror")
        return out.ravel()


def median_denoiser(window: int = 3, shape=(1, 1, 1)) -> Denoiser:
    """Per-channel sliding-window median with reflect boundary."""
    return _MedianDenoiser(window, shape)


def renoise(x, alpha_t: float, seed: int) -> np.ndarray:
    """Map an iterate onto the forward marginal: sqrt(a) x + sqrt(1-a) z."""
    if not 0.0 < alpha_t <= 1.0:
        raise ArgumentError(f"alpha_t must lie in (0, 1], got {alpha_t}")
    x = np.asarray(x, dtype=np.float64)
    z = np.random.default_rng(seed).standard_normal(x.shape)
    return np.sqrt(alpha_t) * x + np.sqrt(1.0 - alpha_t) * z


# ---------------------------------------------------------------------------
# External denoiser protocol "LQDN v1" (little-endian, stdio or TCP)
# ---------------------------------------------------------------------------

MAGIC_REQUEST = b"LQDN1"
MAGIC_OK = b"LQOK1"
MAGIC_ERROR = b"LQER1"
_HEADER = struct.Struct("<IIIId")  # height, width, channels, t, alpha_t


@dataclass(frozen=True)
class ExternalDenoiserEndpoint:
    """Where to reach a denoiser server: a subprocess pipe or a TCP address."""

    kind: str  # "stdio" | "tcp"
    command: tuple = ()
    host: str = "127.0.0.1"
    port: int = 0
    timeout_ms: int = 10_000

    def __post_init__(self):
        if self.kind not in ("stdio", "tcp"):
            raise ArgumentError(f"endpoint kind must be stdio or tcp, got {self.kind}")
        if self.kind == "stdio" and not self.command:
            raise ArgumentError("stdio endpoint needs a command to spawn")
        if self.timeout_ms <= 0:
            raise ArgumentError(f"timeout must be positive, got {self.timeout_ms}")


class _ExternalDenoiser(Denoiser):
    def __init__(self, endpoint, shape, schedule):
        self.endpoint = endpoint
        self.shape = tuple(shape)
        self.schedule = schedule
        self._proc = None
        self._sock = None

    # -- transport ----------------------------------------------------------

    def _connect(self):
        ep = self.endpoint
        if ep.kind == "stdio" and self._proc is None:
            try:
                self._proc = subprocess.Popen(
                    list(ep.command), stdin=subprocess.PIPE, stdout=subprocess.PIPE)
            except OSError as exc:
                raise TransportError(f"cannot spawn {ep.command[0]}: {exc}") from exc
        elif ep.kind == "tcp" and self._sock is None:
            try:
                self._sock = socket.create_connection(
                    (ep.host, ep.port), timeout=ep.timeout_ms / 1000.0)
            except OSError as exc:
                raise TransportError(
                    f"cannot connect to {ep.host}:{ep.port}: {exc}") from exc

    def close(self):
        if self._proc is not None:
            for stream in (self._proc.stdin, self._proc.stdout):
                if stream:
                    stream.close()
            self._proc.terminate()
            self._proc.wait()
            self._proc = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _send(self, payload: bytes):
        if self._proc is not None:
            try:
                self._proc.stdin.write(payload)
                self._proc.stdin.flush()
            except (OSError, ValueError) as exc:
                raise TransportError(f"server pipe closed: {exc}") from exc
        else:
            try:
                self._sock.sendall(payload)
            except OSError as exc:
                raise TransportError(f"send failed: {exc}") from exc

    def _read_exact(self, n: int, deadline: float) -> bytes:
        chunks = bytearray()
        while len(chunks) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError(f"timed out waiting for {n} bytes")
            if self._proc is not None:
                if self._proc.poll() is not None and not select.select(
                        [self._proc.stdout], [], [], 0)[0]:
                    raise TransportError("server process exited")
                ready, _, _ = select.select([self._proc.stdout], [], [], remaining)
                if not ready:
                    continue
                chunk = os.read(self._proc.stdout.fileno(), n - len(chunks))
            else:
                self._sock.settimeout(remaining)
                try:
                    chunk = self._sock.recv(n - len(chunks))
                except socket.timeout as exc:
                    raise TransportError("timed out reading response") from exc
                except OSError as exc:
                    raise TransportError(f"recv failed: {exc}") from exc
            if not chunk:
                raise TransportError("connection closed mid-response")
            chunks.extend(chunk)
        return bytes(chunks)

    # -- protocol -----------------------------------------------------------

    def denoise(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        h, w, c = self.shape
        n = h * w * c
        if x.size != n:
            raise ArgumentError(f"input length {x.size} does not fit shape {self.shape}")
        self._connect()
        alpha = float(self.schedule.alphas[t])
        frame = (MAGIC_REQUEST + _HEADER.pack(h, w, c, int(t), alpha)
                 + x.astype("<f4").tobytes())
        deadline = time.monotonic() + self.endpoint.timeout_ms / 1000.0
        self._send(frame)
        magic = self._read_exact(5, deadline)
        if magic == MAGIC_OK:
            payload = self._read_exact(4 * n, deadline)
            return np.frombuffer(payload, dtype="<f4").astype(np.float64)
        if magic == MAGIC_ERROR:
            (length,) = struct.unpack("<I", self._read_exact(4, deadline))
            message = self._read_exact(length, deadline).decode("utf-8", "replace")
            raise TransportError(f"server error: {message}")
        raise TransportError(f"malformed response magic {magic!r}")


def external_denoiser(endpoint: ExternalDenoiserEndpoint, shape,
                      schedule: DiffusionSchedule) -> Denoiser:
    """Client for an LQDN v1 denoiser server; float32 on the wire."""
    return _ExternalDenoiser(endpoint, shape, schedule)
