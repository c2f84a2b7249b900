"""Bessel(3) diffusion that jumps back to zero at rate R(sqrt(2)*X).

Between jumps the process advances by exact squared-Bessel transitions
(never Euler steps: the entrance law from zero survives discretization
only with exact sampling).  Jumps are generated by Poisson thinning with
the rate's declared bound M: candidate events arrive at rate M and a
candidate at state x is accepted with probability R(sqrt(2)*x)/M, the
rate being evaluated at the left grid state.  Accepted jumps are placed
continuously inside the step, and the process restarts from exactly zero
over the residual time.

Truncation ladders R ^ n couple all levels through a shared candidate
stream with one mark per candidate, which forces pathwise nestedness:
the path at a higher truncation level never exceeds the path at a lower
one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from marblesim.rates import RateFunction
from marblesim.stochastics import RngStream, TimeGrid

__all__ = [
    "RBesselPath",
    "ExcursionRecord",
    "EndpointStats",
    "simulate_rbessel",
    "sample_endpoint_stats",
    "simulate_truncation_ladder",
    "sample_ladder_stats",
    "survival_probability",
    "survival_curve",
    "first_jump_times",
    "excursions",
    "max_excursion_supercritical",
]

SQRT2 = math.sqrt(2.0)


@dataclass
class RBesselPath:
    grid: TimeGrid
    x: np.ndarray
    jump_times: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass
class ExcursionRecord:
    """Durations E_1, E_2, ... between successive zeros, and the excursion
    straddling a query time: sigma_t = S_{k(t)-1} <= t < S_{k(t)}."""

    durations: np.ndarray
    sigma: float
    k: int


@dataclass
class EndpointStats:
    """Per-replica summary at the horizon of a batched simulation."""

    t: float
    x_t: np.ndarray
    sigma: np.ndarray          # last jump time before t (0.0 if none)
    n_jumps: np.ndarray
    max_excursion: np.ndarray  # largest completed duration, incl. straddler age
    meta: dict = field(default_factory=dict)


def _besq3(z, tau, rng):
    """Squared-Bessel(3) step of (possibly per-element) duration tau."""
    k = rng.poisson(np.divide(z, 2.0 * tau, out=np.zeros_like(z), where=tau > 0))
    return 2.0 * tau * rng.gamma(1.5 + k)


def _step(x, t_left, dt, rate, m, rng, sigma, n_jumps, max_exc):
    """Advance one grid step in place; returns the new positions."""
    n = x.size
    if m > 0.0:
        k = rng.poisson(m * dt, size=n)
        p = np.clip(rate(SQRT2 * x) / m, 0.0, 1.0)
        acc = rng.binomial(k, p)
        jumped = acc > 0
    else:
        acc = np.zeros(n, dtype=np.int64)
        jumped = np.zeros(n, dtype=bool)
    u = rng.random(n)
    tau = np.full(n, dt)
    z = np.square(x)
    if jumped.any():
        # last accepted candidate sits at dt * max of `acc` uniforms
        last = dt * u[jumped] ** (1.0 / acc[jumped])
        t_jump = t_left + last
        dur = t_jump - sigma[jumped]
        max_exc[jumped] = np.maximum(max_exc[jumped], dur)
        sigma[jumped] = t_jump
        n_jumps[jumped] += acc[jumped]
        tau[jumped] = dt - last
        z[jumped] = 0.0
    return np.sqrt(_besq3(z, tau, rng))


def simulate_rbessel(
    rate: RateFunction, x0: float, grid: TimeGrid, rng: RngStream
) -> RBesselPath:
    """Single path of the jump-diffusion recorded on the grid.

    ``jump_times`` records the last accepted jump of each step; repeated
    sub-step jumps are counted in ``meta['n_jumps']`` but collapse to one
    recorded time.
    """
    rate.require_bounded()
    if x0 < 0:
        raise ValueError("x0 must be nonnegative")
    gen = rng.generator()
    x = np.array([float(x0)])
    sigma = np.zeros(1)
    n_jumps = np.zeros(1, dtype=np.int64)
    max_exc = np.zeros(1)
    path = np.empty(grid.n_steps + 1)
    path[0] = x0
    jumps = []
    for i in range(grid.n_steps):
        before = n_jumps[0]
        x = _step(x, grid.t0 + i * grid.dt, grid.dt, rate, rate.bound, gen,
                  sigma, n_jumps, max_exc)
        if n_jumps[0] > before:
            jumps.append(sigma[0])
        path[i + 1] = x[0]
    return RBesselPath(
        grid=grid,
        x=path,
        jump_times=np.array(jumps),
        meta={"rate": repr(rate), "seed": rng.seed, "stream_id": rng.stream_id,
              "n_jumps": int(n_jumps[0])},
    )


def sample_endpoint_stats(
    rate: RateFunction,
    t: float,
    n_replicas: int,
    rng: RngStream,
    dt: float | None = None,
    x0: float = 0.0,
) -> EndpointStats:
    """Vectorized replicas of the jump-diffusion run to horizon ``t``."""
    rate.require_bounded()
    if n_replicas < 1:
        raise ValueError("need at least one replica")
    if dt is None:
        dt = 1e-3 * t
    n_steps = max(int(round(t / dt)), 1)
    dt = t / n_steps
    gen = rng.generator()
    x = np.full(n_replicas, float(x0))
    sigma = np.zeros(n_replicas)
    n_jumps = np.zeros(n_replicas, dtype=np.int64)
    max_exc = np.zeros(n_replicas)
    for i in range(n_steps):
        x = _step(x, i * dt, dt, rate, rate.bound, gen, sigma, n_jumps, max_exc)
    max_exc = np.maximum(max_exc, t - sigma)
    return EndpointStats(
        t=t, x_t=x, sigma=sigma, n_jumps=n_jumps, max_excursion=max_exc,
        meta={"rate": repr(rate), "dt": dt, "seed": rng.seed,
              "stream_id": rng.stream_id, "n_replicas": n_replicas},
    )


def _check_ladder(rate_of, levels):
    levels = [float(n) for n in levels]
    if not levels:
        raise ValueError("levels must be nonempty")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")
    return [rate_of(n) for n in levels], levels


def _ladder_step(xs, t_left, dt, rates, m, gen, sigmas, max_excs):
    """One coupled step across truncation levels (index = level, low n first).

    All levels see the same candidate stream; the smallest mark among the
    step's candidates decides acceptance per level, so a jump at a lower
    level forces one at every higher level.  Diffusion draws are shared
    while paths are coalesced and a final min-sweep enforces ordering."""
    n = xs[0].size
    k = gen.poisson(m * dt, size=n)
    has = k > 0
    vmin = np.full(n, np.inf)
    vmin[has] = 1.0 - (1.0 - gen.random(has.sum())) ** (1.0 / k[has])
    place = dt * gen.random(n)
    ys = []
    prev_jump = None
    for j, rate in enumerate(rates):
        p = np.clip(rate(SQRT2 * xs[j]) / m, 0.0, 1.0)
        jumped = vmin <= p
        tau = np.where(jumped, dt - place, dt)
        z = np.where(jumped, 0.0, np.square(xs[j]))
        y = np.sqrt(_besq3(z, tau, gen))
        if j > 0:
            share = (jumped & prev_jump) | (~jumped & ~prev_jump & (xs[j] == xs[j - 1]))
            y = np.where(share, ys[-1], y)
            y = np.minimum(y, ys[-1])
        t_jump = t_left + place
        dur = t_jump - sigmas[j]
        max_excs[j][jumped] = np.maximum(max_excs[j][jumped], dur[jumped])
        sigmas[j][jumped] = t_jump[jumped]
        ys.append(y)
        prev_jump = jumped
    return ys


def simulate_truncation_ladder(
    lam: float,
    grid: TimeGrid,
    levels,
    rng: RngStream,
    x0: float = 0.0,
) -> list[RBesselPath]:
    """Coupled paths under min(lam/g^2, n) for each level n.

    Guarantees pathwise nestedness at every grid time: the path at level
    n' >= n never exceeds the path at level n.
    """
    from marblesim.rates import TruncatedPowerLaw

    rates, levels = _check_ladder(lambda n: TruncatedPowerLaw(lam, n), levels)
    gen = rng.generator()
    m = rates[-1].bound
    xs = [np.array([float(x0)]) for _ in rates]
    sigmas = [np.zeros(1) for _ in rates]
    max_excs = [np.zeros(1) for _ in rates]
    paths = [np.empty(grid.n_steps + 1) for _ in rates]
    jumps: list[list[float]] = [[] for _ in rates]
    for p in paths:
        p[0] = x0
    for i in range(grid.n_steps):
        before = [s[0] for s in sigmas]
        xs = _ladder_step(xs, grid.t0 + i * grid.dt, grid.dt, rates, m, gen,
                          sigmas, max_excs)
        for j in range(len(rates)):
            paths[j][i + 1] = xs[j][0]
            if sigmas[j][0] != before[j]:
                jumps[j].append(sigmas[j][0])
    return [
        RBesselPath(grid=grid, x=paths[j], jump_times=np.array(jumps[j]),
                    meta={"rate": repr(rates[j]), "level": levels[j],
                          "seed": rng.seed, "stream_id": rng.stream_id})
        for j in range(len(rates))
    ]


def sample_ladder_stats(
    lam: float,
    t: float,
    levels,
    n_replicas: int,
    rng: RngStream,
    dt: float | None = None,
    resolve_straddler: bool = False,
    t_extend: float | None = None,
) -> dict[float, EndpointStats]:
    """Batched coupled ladder; one EndpointStats per truncation level.

    With ``resolve_straddler`` the simulation continues past ``t`` (to
    ``t_extend``, default 2t) per level until the straddling excursion
    ends, so ``max_excursion`` is the full max over excursions up to and
    including the straddler (right-censored at t_extend if unresolved).
    """
    from marblesim.rates import TruncatedPowerLaw

    rates, levels = _check_ladder(lambda n: TruncatedPowerLaw(lam, n), levels)
    if dt is None:
        dt = 1e-3 * t
    n_steps = max(int(round(t / dt)), 1)
    dt = t / n_steps
    gen = rng.generator()
    m = rates[-1].bound
    xs = [np.zeros(n_replicas) for _ in rates]
    sigmas = [np.zeros(n_replicas) for _ in rates]
    max_excs = [np.zeros(n_replicas) for _ in rates]
    for i in range(n_steps):
        xs = _ladder_step(xs, i * dt, dt, rates, m, gen, sigmas, max_excs)

    out = {}
    t_ext = t_extend if t_extend is not None else 2.0 * t
    for j, (rate, level) in enumerate(zip(rates, levels)):
        max_exc = max_excs[j].copy()
        censored = 0
        if resolve_straddler:
            end = _first_jump_after(rate, xs[j], t, t_ext, dt, gen)
            cens = ~np.isfinite(end)
            censored = int(cens.sum())
            straddle = np.where(cens, t_ext, end) - sigmas[j]
            max_exc = np.maximum(max_exc, straddle)
        else:
            max_exc = np.maximum(max_exc, t - sigmas[j])
        out[level] = EndpointStats(
            t=t, x_t=xs[j], sigma=sigmas[j],
            n_jumps=np.zeros(n_replicas, dtype=np.int64),
            max_excursion=max_exc,
            meta={"rate": repr(rate), "level": level, "dt": dt,
                  "censored_straddlers": censored,
                  "seed": rng.seed, "stream_id": rng.stream_id},
        )
    return out


def _first_jump_after(rate, x_start, t_from, t_to, dt, gen):
    """First accepted jump time after t_from, starting from states x_start."""
    n = x_start.size
    out = np.full(n, np.inf)
    alive = np.arange(n)
    x = x_start.copy()
    t_now = t_from
    while t_now < t_to and alive.size:
        r = rate(SQRT2 * x)
        u = gen.random(alive.size)
        with np.errstate(divide="ignore"):
            wait = -np.log1p(-u) / r
        jumped = wait < dt
        out[alive[jumped]] = t_now + wait[jumped]
        keep = ~jumped
        alive, x = alive[keep], x[keep]
        x = np.sqrt(_besq3(np.square(x), dt, gen))
        t_now += dt
    return out


def first_jump_times(
    rate: RateFunction,
    t_max: float,
    n_replicas: int,
    rng: RngStream,
    eta: float = 1e-3,
    t_floor: float = 0.01,
    x0: float = 0.0,
) -> np.ndarray:
    """Time of the first jump per replica (inf if none by ``t_max``).

    Steps grow proportionally to elapsed time, dt = eta * max(t, t_floor),
    so decades-long horizons stay affordable while the early rate plateau
    is finely resolved.  Exact Bessel transitions between steps; the
    exponential clock per step uses the rate frozen at the left state.
    """
    rate.require_bounded()
    if n_replicas < 1:
        raise ValueError("need at least one replica")
    gen = rng.generator()
    out = np.full(n_replicas, np.inf)
    alive = np.arange(n_replicas)
    x = np.full(n_replicas, float(x0))
    t_now = 0.0
    while t_now < t_max and alive.size:
        dt = eta * max(t_now, t_floor)
        dt = min(dt, t_max - t_now)
        r = rate(SQRT2 * x)
        u = gen.random(alive.size)
        with np.errstate(divide="ignore"):
            wait = np.where(r > 0, -np.log1p(-u) / np.maximum(r, 1e-300), np.inf)
        jumped = wait < dt
        out[alive[jumped]] = t_now + wait[jumped]
        keep = ~jumped
        alive, x = alive[keep], x[keep]
        x = np.sqrt(_besq3(np.square(x), dt, gen))
        t_now += dt
    return out


def survival_probability(
    rate: RateFunction, t: float, n_replicas: int, rng: RngStream, **kw
) -> tuple[float, float]:
    """Fraction of replicas with no jump in (0, t], with binomial stderr."""
    if n_replicas < 1:
        raise ValueError("need at least one replica")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0.0:
        return 1.0, 0.0
    first = first_jump_times(rate, t, n_replicas, rng, **kw)
    p = float(np.mean(first > t))
    return p, math.sqrt(p * (1.0 - p) / n_replicas)


def survival_curve(
    rate: RateFunction, ts, n_replicas: int, rng: RngStream, **kw
) -> np.ndarray:
    """Survival probabilities at each query time, as (t, p_hat) rows."""
    ts = np.sort(np.asarray(ts, dtype=float))
    first = first_jump_times(rate, float(ts[-1]), n_replicas, rng, **kw)
    p = np.array([np.mean(first > t) for t in ts])
    return np.column_stack([ts, p])


def excursions(path: RBesselPath, query_t: float) -> ExcursionRecord:
    """Durations between recorded zeros and the excursion straddling query_t."""
    t0, t1 = path.grid.t0, path.grid.t1
    if not (t0 <= query_t <= t1):
        raise ValueError("query_t outside the simulated grid")
    jumps = np.asarray(path.jump_times, dtype=float)
    zeros = np.concatenate([[t0], jumps])
    durations = np.diff(zeros)
    k = int(np.searchsorted(jumps, query_t, side="left")) + 1
    sigma = float(zeros[k - 1])
    return ExcursionRecord(durations=durations, sigma=sigma, k=k)


def max_excursion_supercritical(
    lam: float,
    levels,
    t: float,
    n_replicas: int,
    rng: RngStream,
    quantile: float = 0.9,
    dt: float | None = None,
) -> dict[float, float]:
    """Per truncation level, a quantile of the largest excursion up to and
    including the one straddling ``t``.  Requires lam >= 6 (in the
    subcritical regime the statistic does not vanish along the ladder)."""
    if lam < 6.0:
        raise ValueError("supercritical diagnostic requires lam >= 6")
    stats = sample_ladder_stats(
        lam, t, levels, n_replicas, rng, dt=dt, resolve_straddler=True
    )
    return {level: float(np.quantile(s.max_excursion, quantile))
            for level, s in stats.items()}
