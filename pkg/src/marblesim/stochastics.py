"""Seedable random primitives and special functions shared by all simulators.

Everything here is deterministic given an :class:`RngStream`: the same
(seed, stream_id) pair reproduces the same draws bit for bit, and distinct
stream ids give statistically independent streams (numpy ``SeedSequence``
derivation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as _sp

__all__ = [
    "RngStream",
    "TimeGrid",
    "gaussian_increment",
    "squared_bessel_transition",
    "skorokhod_reflect",
    "reg_inc_gamma",
    "reg_inc_beta",
]


@dataclass(frozen=True)
class RngStream:
    """Root of a reproducible random stream.

    ``seed`` identifies the experiment, ``stream_id`` the substream
    (replica batch, module tag).  Streams derived from distinct ids are
    independent; the draw sequence depends only on (seed, stream_id),
    never on thread scheduling.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ValueError("seed and stream_id must be nonnegative")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        return np.random.default_rng(
            np.random.SeedSequence(entropy=(self.seed, self.stream_id))
        )

    def child(self, tag: int) -> "RngStream":
        """Derive a substream; ``tag`` is folded into the stream id."""
        return RngStream(self.seed, (self.stream_id << 20) + tag + 1)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t0, t0+dt, ..., t1 with t1 = t0 + n_steps*dt."""

    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def t1(self) -> float:
        return self.t0 + self.n_steps * self.dt

    @classmethod
    def regular(cls, t0: float, t1: float, n_steps: int) -> "TimeGrid":
        if t1 <= t0:
            raise ValueError("need t1 > t0")
        return cls(t0, (t1 - t0) / n_steps, n_steps)

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


def gaussian_increment(rng: np.random.Generator, dt: float, diffusivity: float = 1.0, size=None):
    """Draw Normal(0, diffusivity*dt) increments."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if diffusivity <= 0:
        raise ValueError("diffusivity must be positive")
    return rng.standard_normal(size) * math.sqrt(diffusivity * dt)


def squared_bessel_transition(x0, dim: float, dt: float, rng: np.random.Generator):
    """Exact transition of a squared Bessel process of dimension ``dim``.

    Returns Y distributed as the time-dt state of a squared Bessel process
    started from ``x0`` (the *squared* initial position), via the
    noncentral chi-square mixture Y = 2*dt*Gamma(dim/2 + K) with
    K ~ Poisson(x0 / (2*dt)).  The Bessel position itself is sqrt(Y).
    E[Y] = x0 + dim*dt.  Vectorizes over ``x0``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dim <= 0:
        raise ValueError("dim must be positive")
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 < 0):
        raise ValueError("x0 must be nonnegative")
    k = rng.poisson(x0 / (2.0 * dt))
    return 2.0 * dt * rng.gamma(0.5 * dim + k)


def skorokhod_reflect(driver, start_gap: float | None = None) -> np.ndarray:
    """Apply the Skorokhod map at zero to a discretized driving path.

    D[k] = W[k] + max(0, max_{j<=k} (-W[j])): the minimal push keeping the
    path nonnegative.  Leaves paths that never go negative unchanged, and
    is idempotent.
    """
    w = np.asarray(driver, dtype=float)
    if w.size == 0:
        raise ValueError("driver path must be nonempty")
    if start_gap is not None and not math.isclose(w[0], start_gap, abs_tol=1e-12):
        raise ValueError("driver must start at start_gap")
    push = np.maximum(np.maximum.accumulate(-w), 0.0)
    return w + push


def reg_inc_gamma(shape: float, x) -> np.ndarray | float:
    """Regularized lower incomplete gamma P(shape, x), the Gamma(shape, 1) CDF."""
    if shape <= 0:
        raise ValueError("shape must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be nonnegative")
    out = _sp.gammainc(shape, x)
    return float(out) if out.ndim == 0 else out


def reg_inc_beta(a: float, b: float, x) -> np.ndarray | float:
    """Regularized incomplete beta I_x(a, b), the Beta(a, b) CDF."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise ValueError("x must lie in [0, 1]")
    out = _sp.betainc(a, b, x)
    return float(out) if out.ndim == 0 else out
