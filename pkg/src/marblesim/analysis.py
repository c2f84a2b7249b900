"""Parameter algebra for the power-law rate family and the statistics engine.

For fragmentation rate lam/g^2 the relevant constants are

* alpha = (1 + sqrt(4*lam + 1)) / 2, the positive root of a*(a-1) = lam,
* beta  = (alpha - 1) / 2, in (0, 1) exactly when lam is in (0, 6),
* c     = (6 - lam) / 4,
* bessel_dim = 2*alpha + 1,

with the regime classified against the critical value lam = 6.  The
statistical side provides empirical-CDF distances, tail-exponent fits,
the stable-subordinator collapse diagnostic, and the closed-form marginal
of the squared gap (a Beta-Gamma product law, see
:func:`height_square_cdf`).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special as _sp

from marblesim.stochastics import reg_inc_beta, reg_inc_gamma

__all__ = [
    "Regime",
    "LambdaParams",
    "EmpiricalSample",
    "CheckReport",
    "lambda_params",
    "lamperti_root",
    "ks_distance",
    "ks_two_sample",
    "ks_critical_value",
    "tail_exponent_fit",
    "subordinator_scaling_check",
    "height_square_cdf",
]

CRITICAL_LAMBDA = 6.0

# Asymptotic Kolmogorov-Smirnov critical coefficient at significance ~0.01.
KS_COEFF_01 = 1.63


class Regime(enum.Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"


@dataclass(frozen=True)
class LambdaParams:
    lam: float
    alpha: float
    beta: float
    c: float
    bessel_dim: float
    regime: Regime


def lambda_params(lam: float) -> LambdaParams:
    """Derived constants for the power-law rate with parameter ``lam``."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    alpha = 0.5 * (1.0 + math.sqrt(4.0 * lam + 1.0))
    beta = 0.5 * (alpha - 1.0)
    c = 0.25 * (CRITICAL_LAMBDA - lam)
    if lam < CRITICAL_LAMBDA:
        regime = Regime.SUBCRITICAL
    elif lam == CRITICAL_LAMBDA:
        regime = Regime.CRITICAL
    else:
        regime = Regime.SUPERCRITICAL
    return LambdaParams(lam, alpha, beta, c, 2.0 * alpha + 1.0, regime)


def lamperti_root(lam: float) -> tuple[float, bool]:
    """Positive root theta0 of theta^2/2 + theta/2 - lam/2 and whether it
    lies in (0, 2), i.e. whether the killed process re-enters from zero."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    theta0 = 0.5 * (-1.0 + math.sqrt(1.0 + 4.0 * lam))
    return theta0, 0.0 < theta0 < 2.0


@dataclass
class EmpiricalSample:
    """I.i.d. scalar draws plus the provenance recorded in output files."""

    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.size == 0:
            raise ValueError("sample must be nonempty")
        self.meta = dict(self.meta)
        self.meta.setdefault("size", int(self.values.size))


@dataclass
class CheckReport:
    """One statistic compared against one threshold, JSON-serializable."""

    name: str
    statistic: float
    threshold: float
    passed: bool
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "statistic": float(self.statistic),
            "threshold": float(self.threshold),
            "pass": bool(self.passed),
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _values(sample) -> np.ndarray:
    if isinstance(sample, EmpiricalSample):
        return sample.values
    v = np.asarray(sample, dtype=float)
    if v.size == 0:
        raise ValueError("sample must be nonempty")
    return v


def ks_distance(sample, cdf) -> float:
    """sup_x |F_n(x) - F(x)| against a target CDF, both one-sided gaps."""
    x = np.sort(_values(sample))
    n = x.size
    f = np.asarray(cdf(x), dtype=float)
    hi = np.arange(1, n + 1) / n
    lo = np.arange(0, n) / n
    return float(max(np.max(np.abs(hi - f)), np.max(np.abs(f - lo))))


def ks_two_sample(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance sup |F_a - F_b|."""
    xa = np.sort(_values(a))
    xb = np.sort(_values(b))
    grid = np.concatenate([xa, xb])
    fa = np.searchsorted(xa, grid, side="right") / xa.size
    fb = np.searchsorted(xb, grid, side="right") / xb.size
    return float(np.max(np.abs(fa - fb)))


def ks_critical_value(n: int, m: int | None = None, coeff: float = KS_COEFF_01) -> float:
    """Asymptotic KS acceptance threshold coeff*sqrt(1/n [+ 1/m])."""
    inv = 1.0 / n + (1.0 / m if m else 0.0)
    return coeff * math.sqrt(inv)


def tail_exponent_fit(survival_curve, window) -> tuple[float, float]:
    """Fit p(t) ~ C * t^(-beta) by least squares on log-log inside ``window``.

    Returns (beta_hat, stderr of the slope).  Requires at least five
    strictly positive probabilities inside the window.
    """
    pts = np.asarray(survival_curve, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("survival_curve must be an array of (t, p) pairs")
    t_min, t_max = window
    mask = (pts[:, 0] >= t_min) & (pts[:, 0] <= t_max)
    t, p = pts[mask, 0], pts[mask, 1]
    if t.size < 5:
        raise ValueError("need at least 5 points inside the window")
    if np.any(p <= 0):
        raise ValueError("survival probabilities must be positive inside the window")
    lx, ly = np.log(t), np.log(p)
    lx_c = lx - lx.mean()
    sxx = float(np.dot(lx_c, lx_c))
    slope = float(np.dot(lx_c, ly) / sxx)
    resid = ly - (ly.mean() + slope * lx_c)
    dof = t.size - 2
    stderr = math.sqrt(max(float(np.dot(resid, resid)), 0.0) / dof / sxx) if dof > 0 else 0.0
    return -slope, stderr


def subordinator_scaling_check(
    excursion_lengths_by_n: dict,
    beta: float,
    r_grid=(0.5, 1.0, 2.0),
    theta_grid=(0.5, 1.0, 2.0),
) -> CheckReport:
    """Collapse diagnostic for heavy-tailed excursion sums.

    For each truncation level n, partitions the i.i.d. durations into
    blocks, forms the partial sums S_{floor(n^beta * r)} and estimates
    phi_hat(n, r, theta) = -log mean(exp(-theta * S)) / (r * theta^beta).
    If the sums converge to a stable subordinator the statistic is a
    constant; the report's statistic is the worst relative dispersion of
    phi_hat across n over the (r, theta) grid.
    """
    levels = sorted(excursion_lengths_by_n)
    if len(levels) < 2:
        raise ValueError("need at least 2 truncation levels")
    sizes = {len(_values(excursion_lengths_by_n[n])) for n in levels}
    if len(sizes) != 1:
        raise ValueError("mismatched sample sizes across levels")

    r_grid = np.asarray(r_grid, dtype=float)
    theta_grid = np.asarray(theta_grid, dtype=float)
    phi = np.empty((len(levels), r_grid.size, theta_grid.size))
    for i, n in enumerate(levels):
        e = _values(excursion_lengths_by_n[n])
        k_max = max(int(n**beta * r_grid.max()), 1)
        n_blocks = e.size // k_max
        if n_blocks < 8:
            raise ValueError(f"too few durations at level {n} for block size {k_max}")
        s = np.cumsum(e[: n_blocks * k_max].reshape(n_blocks, k_max), axis=1)
        for j, r in enumerate(r_grid):
            k = max(int(n**beta * r), 1)
            xi = s[:, k - 1]
            lap = np.mean(np.exp(-np.outer(theta_grid, xi)), axis=1)
            phi[i, j, :] = -np.log(lap) / (r * theta_grid**beta)

    mean = phi.mean(axis=0)
    disp = float(np.max((phi.max(axis=0) - phi.min(axis=0)) / np.abs(mean)))
    return CheckReport(
        name="subordinator_scaling",
        statistic=disp,
        threshold=0.05,
        passed=disp < 0.05,
        meta={
            "beta": beta,
            "levels": [int(n) for n in levels],
            "phi_by_level": phi.mean(axis=(1, 2)).tolist(),
            "r_grid": r_grid.tolist(),
            "theta_grid": theta_grid.tolist(),
        },
    )


def height_square_cdf(lam: float, n_nodes: int = 128):
    """CDF of the squared straddling gap normalized by 2t (lam < 6).

    The law is the product W*V of independent W ~ Beta(1-beta, beta)
    (the age fraction of the straddling excursion) and V ~ Gamma(alpha/2+1)
    (the size-biased endpoint), evaluated by Gauss-Jacobi quadrature over
    the Beta weight.  Its mean is (6-lam)/4.  At lam = 0 the product
    degenerates to Gamma(3/2).
    """
    p = lambda_params(lam)
    if p.regime is not Regime.SUBCRITICAL:
        raise ValueError("closed-form gap law requires lam < 6")
    mu = 0.5 * p.alpha + 1.0
    if p.beta == 0.0:
        def cdf0(z):
            return reg_inc_gamma(mu, np.maximum(np.asarray(z, dtype=float), 0.0))

        return cdf0

    # Beta(1-beta, beta) weight w^(-beta) (1-w)^(beta-1) maps to the Jacobi
    # weight (1-x)^(beta-1) (1+x)^(-beta) under w = (1+x)/2.  (scipy's node
    # recurrence warns on the 0/0 it resolves internally when the exponents
    # sum to -1; the weights come out finite.)
    with np.errstate(invalid="ignore"):
        nodes, weights = _sp.roots_jacobi(n_nodes, p.beta - 1.0, -p.beta)
    w = 0.5 * (nodes + 1.0)
    pw = weights / weights.sum()

    def cdf(z):
        z = np.maximum(np.asarray(z, dtype=float), 0.0)
        vals = _sp.gammainc(mu, z[..., None] / w)
        out = vals @ pw
        return float(out) if out.ndim == 0 else out

    return cdf


def age_fraction_cdf(lam: float):
    """CDF of (t - sigma_t)/t: Beta(1-beta, beta)."""
    p = lambda_params(lam)

    def cdf(x):
        return reg_inc_beta(1.0 - p.beta, p.beta, np.clip(x, 0.0, 1.0))

    return cdf


def start_fraction_cdf(lam: float):
    """CDF of sigma_t/t, the straddling-excursion start fraction: Beta(beta, 1-beta)."""
    p = lambda_params(lam)

    def cdf(x):
        return reg_inc_beta(p.beta, 1.0 - p.beta, np.clip(x, 0.0, 1.0))

    return cdf


def endpoint_gamma_cdf(lam: float):
    """CDF of X_t^2 / (2*(t - sigma_t)) given sigma_t: Gamma(alpha/2 + 1)."""
    p = lambda_params(lam)
    shape = 0.5 * p.alpha + 1.0

    def cdf(x):
        return reg_inc_gamma(shape, np.maximum(np.asarray(x, dtype=float), 0.0))

    return cdf
