"""The vein triple (L, C, U): a central Brownian path with companions
reflected off it from below and above, all three collapsing onto C at
rate R(U - L).

Conditional on C, each gap D_U = U - C and D_L = C - L is a Brownian
motion (variance 2 per unit time) reflected at zero.  The simulation
drives the gaps with increments eta_U = xi_U - xi_C, eta_L = xi_C - xi_L
built from three independent Gaussians, so the joint correlation with C
is preserved, and advances each gap by the folded-normal transition
|d + eta| which is the exact reflected-at-zero marginal step.  Collapses
are Poisson-thinned at the left grid state and placed continuously inside
the step; the gaps regrow from zero over the residual time.

The gap (U - L)/sqrt(2) of a standard vein is distributionally the
jump-diffusion of :mod:`marblesim.rbessel` with the same rate, and the
triple run to time t then recentered describes the bubble containing a
fixed spacetime point.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from marblesim.analysis import (
    CheckReport,
    endpoint_gamma_cdf,
    ks_critical_value,
    ks_distance,
)
from marblesim.rates import RateFunction
from marblesim.stochastics import RngStream, TimeGrid

__all__ = [
    "DeathKind",
    "VeinPath",
    "Continuation",
    "Bubble",
    "VeinStats",
    "simulate_vein",
    "sample_vein_stats",
    "simulate_vein_marginal",
    "continue_bubbles",
    "uniformity_check",
    "bubble_at_point",
    "conditioned_bessel_check",
]

SQRT2 = math.sqrt(2.0)


class DeathKind(enum.Enum):
    COALESCED = "coalesced"
    FRAGMENTED = "fragmented"


@dataclass
class Continuation:
    times: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    tau: float
    death_kind: DeathKind | None   # None while right-censored at the horizon


@dataclass
class VeinPath:
    grid: TimeGrid
    lower: np.ndarray
    center: np.ndarray
    upper: np.ndarray
    jump_times: np.ndarray
    continuation: Continuation | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class Bubble:
    """Open spacetime region between two consecutive paths."""

    sigma: float
    tau: float
    times: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    death_kind: DeathKind | None
    censored: bool = False

    def height_at(self, s: float) -> float:
        if not (self.sigma <= s <= self.tau):
            raise ValueError("s outside the bubble's lifetime")
        heights = self.upper - self.lower
        t = np.concatenate([[self.sigma], self.times, [self.tau]])
        h_end = 0.0 if self.death_kind is DeathKind.COALESCED else heights[-1]
        h = np.concatenate([[0.0], heights, [h_end]])
        return float(np.interp(s, t, h))


@dataclass
class VeinStats:
    """Endpoint state of a batch of standard veins at the horizon."""

    t: float
    lower: np.ndarray
    center: np.ndarray
    upper: np.ndarray
    sigma: np.ndarray
    n_jumps: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def gap(self) -> np.ndarray:
        return self.upper - self.lower


class _VeinState:
    """Vectorized state (C, D_U, D_L) plus jump bookkeeping."""

    def __init__(self, n, start=(0.0, 0.0, 0.0)):
        lo, c, up = start
        if not lo <= c <= up:
            raise ValueError("start must satisfy l <= c <= u")
        self.c = np.full(n, float(c))
        self.du = np.full(n, float(up - c))
        self.dl = np.full(n, float(c - lo))
        self.sigma = np.zeros(n)
        self.n_jumps = np.zeros(n, dtype=np.int64)

    def step(self, t_left, dt, rate, m, gen):
        n = self.c.size
        root_dt = math.sqrt(dt)
        xi_c = gen.standard_normal(n) * root_dt
        xi_u = gen.standard_normal(n) * root_dt
        xi_l = gen.standard_normal(n) * root_dt
        du = np.abs(self.du + (xi_u - xi_c))
        dl = np.abs(self.dl + (xi_c - xi_l))
        if m > 0.0:
            k = gen.poisson(m * dt, size=n)
            p = np.clip(rate(self.du + self.dl) / m, 0.0, 1.0)
            acc = gen.binomial(k, p)
            jumped = acc > 0
            u = gen.random(n)
            if jumped.any():
                last = dt * u[jumped] ** (1.0 / acc[jumped])
                resid = dt - last
                nj = int(jumped.sum())
                scale = np.sqrt(2.0 * resid)
                du[jumped] = np.abs(gen.standard_normal(nj) * scale)
                dl[jumped] = np.abs(gen.standard_normal(nj) * scale)
                self.sigma[jumped] = t_left + last
                self.n_jumps[jumped] += acc[jumped]
        self.c += xi_c
        self.du, self.dl = du, dl


def simulate_vein(
    rate: RateFunction,
    start: tuple[float, float, float],
    grid: TimeGrid,
    rng: RngStream,
) -> VeinPath:
    """One vein triple recorded on the grid (jump times collapse per step)."""
    rate.require_bounded()
    state = _VeinState(1, start)
    gen = rng.generator()
    n = grid.n_steps
    low, cen, up = np.empty(n + 1), np.empty(n + 1), np.empty(n + 1)
    low[0], cen[0], up[0] = start
    jumps = []
    for i in range(n):
        before = state.sigma[0]
        state.step(grid.t0 + i * grid.dt, grid.dt, rate, rate.bound, gen)
        if state.sigma[0] != before:
            jumps.append(state.sigma[0])
        cen[i + 1] = state.c[0]
        up[i + 1] = state.c[0] + state.du[0]
        low[i + 1] = state.c[0] - state.dl[0]
    return VeinPath(
        grid=grid, lower=low, center=cen, upper=up,
        jump_times=np.array(jumps),
        meta={"rate": repr(rate), "seed": rng.seed, "stream_id": rng.stream_id},
    )


def sample_vein_stats(
    rate: RateFunction,
    t: float,
    n_replicas: int,
    rng: RngStream,
    dt: float | None = None,
) -> VeinStats:
    """Vectorized standard veins (started from the origin) run to ``t``."""
    rate.require_bounded()
    if n_replicas < 1:
        raise ValueError("need at least one replica")
    if dt is None:
        dt = 1e-3 * t
    n_steps = max(int(round(t / dt)), 1)
    dt = t / n_steps
    state = _VeinState(n_replicas)
    gen = rng.generator()
    for i in range(n_steps):
        state.step(i * dt, dt, rate, rate.bound, gen)
    return VeinStats(
        t=t, lower=state.c - state.dl, center=state.c.copy(),
        upper=state.c + state.du, sigma=state.sigma, n_jumps=state.n_jumps,
        meta={"rate": repr(rate), "dt": dt, "seed": rng.seed,
              "stream_id": rng.stream_id, "n_replicas": n_replicas},
    )


def simulate_vein_marginal(
    rate: RateFunction,
    t: float,
    n_replicas: int,
    rng: RngStream,
    dt: float | None = None,
) -> VeinStats:
    """Two-path construction of the (L, U) marginal dynamics.

    L and U diffuse as Brownian motions conditioned never to collide
    (difference = sqrt(2) x Bessel(3), advanced exactly; midpoint an
    independent Brownian motion of variance 1/2), and at rate R(U - L)
    both jump to a uniformly chosen point of [L, U].  No central path is
    simulated; ``center`` in the result repeats the jump-target midpoint
    and is reported only for shape compatibility.
    """
    rate.require_bounded()
    if n_replicas < 1:
        raise ValueError("need at least one replica")
    if dt is None:
        dt = 1e-3 * t
    n_steps = max(int(round(t / dt)), 1)
    dt = t / n_steps
    gen = rng.generator()
    y = np.zeros(n_replicas)          # gap / sqrt(2): unit Bessel(3)
    mid = np.zeros(n_replicas)
    sigma = np.zeros(n_replicas)
    n_jumps = np.zeros(n_replicas, dtype=np.int64)
    m = rate.bound
    for i in range(n_steps):
        gap = SQRT2 * y
        if m > 0.0:
            k = gen.poisson(m * dt, size=n_replicas)
            p = np.clip(rate(gap) / m, 0.0, 1.0)
            acc = gen.binomial(k, p)
            jumped = acc > 0
        else:
            jumped = np.zeros(n_replicas, dtype=bool)
        u_place = gen.random(n_replicas)
        u_target = gen.random(n_replicas)
        tau = np.full(n_replicas, dt)
        z = np.square(y)
        if jumped.any():
            last = dt * u_place[jumped] ** (1.0 / acc[jumped])
            # uniform jump target inside the pre-jump interval
            mid[jumped] += gap[jumped] * (u_target[jumped] - 0.5)
            sigma[jumped] = i * dt + last
            n_jumps[jumped] += acc[jumped]
            tau[jumped] = dt - last
            z[jumped] = 0.0
        k2 = gen.poisson(np.divide(z, 2.0 * tau, out=np.zeros_like(z), where=tau > 0))
        y = np.sqrt(2.0 * tau * gen.gamma(1.5 + k2))
        mid += gen.standard_normal(n_replicas) * math.sqrt(0.5 * dt)
    return VeinStats(
        t=t, lower=mid - y / SQRT2, center=mid.copy(), upper=mid + y / SQRT2,
        sigma=sigma, n_jumps=n_jumps,
        meta={"rate": repr(rate), "dt": dt, "construction": "marginal",
              "seed": rng.seed, "stream_id": rng.stream_id},
    )


def continue_bubbles(
    lower,
    upper,
    rate: RateFunction,
    t: float,
    rng: RngStream | np.random.Generator,
    dt: float,
    horizon: float,
):
    """Continue bubble boundaries past ``t`` as independent Brownian paths.

    The bubble dies when the boundaries meet (crossing time linearly
    interpolated) or at a Poisson-thinned fragmentation at rate R(U - L),
    whichever comes first; survivors at ``horizon`` are right-censored.
    Returns (tau, death_code, censored) with death_code 0 = coalesced,
    1 = fragmented, -1 = censored.
    """
    rate.require_bounded()
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    lo = np.array(lower, dtype=float, copy=True)
    up = np.array(upper, dtype=float, copy=True)
    n = lo.size
    tau = np.full(n, horizon)
    death = np.full(n, -1, dtype=np.int64)
    alive = np.arange(n)
    m = rate.bound
    t_now = t
    while t_now < horizon and alive.size:
        step = min(dt, horizon - t_now)
        na = alive.size
        gap_left = up - lo
        frag_time = np.full(na, np.inf)
        if m > 0.0:
            k = gen.poisson(m * step, size=na)
            p = np.clip(rate(gap_left) / m, 0.0, 1.0)
            acc = gen.binomial(k, p)
            fr = acc > 0
            # first accepted candidate: min of acc uniforms
            frag_time[fr] = step * (1.0 - gen.random(fr.sum()) ** (1.0 / acc[fr]))
        lo_new = lo + gen.standard_normal(na) * math.sqrt(step)
        up_new = up + gen.standard_normal(na) * math.sqrt(step)
        gap_new = up_new - lo_new
        meet_time = np.full(na, np.inf)
        crossed = gap_new <= 0
        meet_time[crossed] = step * gap_left[crossed] / (gap_left[crossed] - gap_new[crossed])
        first = np.minimum(frag_time, meet_time)
        dead = np.isfinite(first)
        if dead.any():
            idx = alive[dead]
            tau[idx] = t_now + first[dead]
            death[idx] = np.where(meet_time[dead] <= frag_time[dead], 0, 1)
        keep = ~dead
        alive, lo, up = alive[keep], lo_new[keep], up_new[keep]
        t_now += step
    return tau, death, death == -1


def uniformity_check(
    stats: VeinStats,
    coeff_scale: float = 2.0,
    corr_threshold: float = 0.05,
) -> CheckReport:
    """Test that (C - L)/(U - L) is Uniform(0,1) and uncorrelated with the gap."""
    gap = stats.gap
    ok = gap > 0
    if not ok.any():
        raise ValueError("all gaps degenerate; nothing to test")
    ratio = (stats.center[ok] - stats.lower[ok]) / gap[ok]
    ks = ks_distance(ratio, lambda x: np.clip(x, 0.0, 1.0))
    if ratio.size > 1:
        corr = float(np.corrcoef(ratio, gap[ok])[0, 1])
    else:
        corr = 0.0
    threshold = coeff_scale * ks_critical_value(int(ok.sum()))
    passed = ks < threshold and abs(corr) < corr_threshold
    return CheckReport(
        name="uniformity_on_gap",
        statistic=ks,
        threshold=threshold,
        passed=passed,
        meta={"corr": corr, "corr_threshold": corr_threshold,
              "n_used": int(ok.sum()), **stats.meta},
    )


def bubble_at_point(
    rate: RateFunction,
    z: tuple[float, float],
    grid: TimeGrid,
    rng: RngStream,
    continuation_dt: float | None = None,
    continuation_horizon: float | None = None,
) -> tuple[VeinPath, Bubble]:
    """Sample the bubble containing the spacetime point z = (t, x).

    Runs a standard vein on [0, t], recenters it so the central path ends
    at x, then continues the boundaries as independent Brownian motions
    killed by meeting or fragmentation.  The bubble is born at the last
    collapse before t (0 if none).
    """
    t, x = z
    if t <= 0:
        raise ValueError("need t > 0")
    if not math.isclose(grid.t0, 0.0) or not math.isclose(grid.t1, t):
        raise ValueError("grid must span [0, t]")
    path = simulate_vein(rate, (0.0, 0.0, 0.0), grid, rng)
    shift = x - path.center[-1]
    path.lower += shift
    path.center += shift
    path.upper += shift
    if continuation_dt is None:
        continuation_dt = grid.dt
    if continuation_horizon is None:
        continuation_horizon = t + 8.0 * t
    gen = rng.child(1).generator()
    lo, up = np.array([path.lower[-1]]), np.array([path.upper[-1]])
    times, lows, ups = [t], [lo[0]], [up[0]]
    tau_arr, death, _ = _record_continuation(
        lo, up, rate, t, gen, continuation_dt, continuation_horizon, times, lows, ups
    )
    tau = float(tau_arr[0])
    kind = {0: DeathKind.COALESCED, 1: DeathKind.FRAGMENTED, -1: None}[int(death[0])]
    path.continuation = Continuation(
        times=np.array(times), lower=np.array(lows), upper=np.array(ups),
        tau=tau, death_kind=kind,
    )
    sigma = float(path.jump_times[-1]) if path.jump_times.size else 0.0
    seg = path.grid.times() > sigma
    times_all = np.concatenate([path.grid.times()[seg], times[1:]])
    lower_all = np.concatenate([path.lower[seg], lows[1:]])
    upper_all = np.concatenate([path.upper[seg], ups[1:]])
    bubble = Bubble(
        sigma=sigma, tau=tau, times=times_all, lower=lower_all,
        upper=upper_all, death_kind=kind, censored=kind is None,
    )
    return path, bubble


def _record_continuation(lo, up, rate, t, gen, dt, horizon, times, lows, ups):
    """Single-bubble continuation that also records the boundary arrays."""
    rate.require_bounded()
    m = rate.bound
    tau = np.full(1, horizon)
    death = np.full(1, -1, dtype=np.int64)
    t_now = t
    while t_now < horizon and death[0] == -1:
        step = min(dt, horizon - t_now)
        gap_left = up[0] - lo[0]
        frag_time = np.inf
        if m > 0.0:
            k = gen.poisson(m * step)
            if k > 0:
                acc = gen.binomial(k, min(max(float(rate(gap_left)) / m, 0.0), 1.0))
                if acc > 0:
                    frag_time = step * (1.0 - gen.random() ** (1.0 / acc))
        lo_new = lo[0] + gen.standard_normal() * math.sqrt(step)
        up_new = up[0] + gen.standard_normal() * math.sqrt(step)
        gap_new = up_new - lo_new
        meet_time = np.inf
        if gap_new <= 0:
            meet_time = step * gap_left / (gap_left - gap_new)
        first = min(frag_time, meet_time)
        if math.isfinite(first):
            tau[0] = t_now + first
            death[0] = 0 if meet_time <= frag_time else 1
            break
        lo[0], up[0] = lo_new, up_new
        t_now += step
        times.append(t_now)
        lows.append(lo_new)
        ups.append(up_new)
    return tau, death, death == -1


def conditioned_bessel_check(
    stats: VeinStats, lam: float, threshold: float = 0.03
) -> CheckReport:
    """Endpoint law given the straddling-excursion start: the squared gap
    over 2*(2*(t - sigma)) follows Gamma(alpha/2 + 1)."""
    x = stats.gap / SQRT2
    age = stats.t - stats.sigma
    ratio = np.square(x) / (2.0 * age)
    ks = ks_distance(ratio, endpoint_gamma_cdf(lam))
    return CheckReport(
        name="conditional_endpoint_gamma",
        statistic=ks,
        threshold=threshold,
        passed=ks < threshold,
        meta={"lam": lam, **stats.meta},
    )
