"""Fragmentation rate functions R(g) evaluated on gap sizes g > 0.

A rate declares ``bound`` = sup R, used as the envelope for Poisson
thinning.  The pure power law lambda/g^2 is unbounded and can only be
simulated through its truncations; every other kind is directly simulable.
All rates are closed under truncation via :meth:`RateFunction.truncate`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RateFunction",
    "PowerLaw",
    "TruncatedPowerLaw",
    "Constant",
    "HalfLambdaTrunc",
    "TableRate",
]


class RateFunction:
    """Base class: evaluable at any g > 0, with a declared upper bound."""

    bound: float = math.inf

    def __call__(self, g):
        raise NotImplementedError

    @property
    def is_bounded(self) -> bool:
        return math.isfinite(self.bound)

    def truncate(self, n: float) -> "RateFunction":
        """Pointwise minimum with the constant level n."""
        if n <= 0:
            raise ValueError("truncation level must be positive")
        return _Truncated(self, n)

    def require_bounded(self):
        if not self.is_bounded:
            raise ValueError(
                f"{self!r} is unbounded; truncate it before simulating"
            )


@dataclass(frozen=True)
class PowerLaw(RateFunction):
    """R(g) = lam / g^2.  Unbounded: usable only through truncations."""

    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")

    @property
    def bound(self) -> float:
        return 0.0 if self.lam == 0 else math.inf

    def __call__(self, g):
        g = np.asarray(g, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(g > 0, self.lam / np.square(g), math.inf)

    def truncate(self, n: float) -> "TruncatedPowerLaw":
        return TruncatedPowerLaw(self.lam, n)


@dataclass(frozen=True)
class TruncatedPowerLaw(RateFunction):
    """R(g) = min(lam / g^2, n): nonincreasing in g, nondecreasing in n."""

    lam: float
    n: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.n <= 0:
            raise ValueError("n must be positive")

    @property
    def bound(self) -> float:
        return self.n if self.lam > 0 else 0.0

    def __call__(self, g):
        g = np.asarray(g, dtype=float)
        with np.errstate(divide="ignore"):
            return np.minimum(np.where(g > 0, self.lam / np.square(g), math.inf), self.n)

    def truncate(self, n: float) -> "TruncatedPowerLaw":
        return TruncatedPowerLaw(self.lam, min(self.n, n))


@dataclass(frozen=True)
class Constant(RateFunction):
    """State-independent rate R(g) = r0."""

    r0: float

    def __post_init__(self):
        if self.r0 < 0:
            raise ValueError("r0 must be nonnegative")

    @property
    def bound(self) -> float:
        return self.r0

    def __call__(self, g):
        return np.full_like(np.asarray(g, dtype=float), self.r0)


@dataclass(frozen=True)
class HalfLambdaTrunc(RateFunction):
    """R(g) = min(lam / g^2, lam / 2); the cap is reached at g = sqrt(2)."""

    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")

    @property
    def bound(self) -> float:
        return 0.5 * self.lam

    def __call__(self, g):
        g = np.asarray(g, dtype=float)
        with np.errstate(divide="ignore"):
            return np.minimum(np.where(g > 0, self.lam / np.square(g), math.inf), 0.5 * self.lam)


class TableRate(RateFunction):
    """Right-continuous step function given breakpoints [(g_i, r_i), ...].

    Below the first breakpoint the first value applies; at and above g_i
    the value r_i applies until the next breakpoint.
    """

    def __init__(self, breakpoints):
        pts = sorted(breakpoints)
        if not pts:
            raise ValueError("need at least one breakpoint")
        self._g = np.array([p[0] for p in pts], dtype=float)
        self._r = np.array([p[1] for p in pts], dtype=float)
        if np.any(self._g <= 0):
            raise ValueError("breakpoints must be at positive g")
        if np.any(self._r < 0) or not np.all(np.isfinite(self._r)):
            raise ValueError("rate values must be finite and nonnegative")

    @property
    def bound(self) -> float:
        return float(self._r.max())

    def __call__(self, g):
        g = np.asarray(g, dtype=float)
        idx = np.clip(np.searchsorted(self._g, g, side="right") - 1, 0, len(self._r) - 1)
        return self._r[idx]

    def __repr__(self):
        return f"TableRate({list(zip(self._g, self._r))!r})"


class _Truncated(RateFunction):
    """Generic pointwise minimum of a rate with a constant level."""

    def __init__(self, base: RateFunction, n: float):
        self._base = base
        self._n = float(n)

    @property
    def bound(self) -> float:
        return min(self._base.bound, self._n)

    def __call__(self, g):
        return np.minimum(self._base(g), self._n)

    def __repr__(self):
        return f"{self._base!r}.truncate({self._n!r})"
