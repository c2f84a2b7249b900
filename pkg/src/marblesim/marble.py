"""Finite-resolution simulation of the full coalescing-fragmenting front.

Particles carry independent Gaussian increments per step; any run of
adjacent particles whose order swapped (or met) collapses to the midpoint
of its extremes, and each adjacent gap fragments by Poisson thinning at
rate R(gap), refilling the interval with fresh particles at spacing
``delta``.  The uncountable refill of the continuum dynamics is realized
at spacing delta; the expected-count law (b-a)/sqrt(2*pi*t) makes the
delta -> 0 limit effective once delta is well below sqrt(dt), so the
default ties delta = sqrt(dt)/10.

Bubbles (maximal open gaps persisting over time) are tracked by replaying
recorded fronts, merge maps and fragmentation events; a bubble dies when
its own two boundary particles coalesce or its interval fragments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from marblesim.rates import RateFunction
from marblesim.stochastics import RngStream, TimeGrid
from marblesim.vein import Bubble, DeathKind
from marblesim.analysis import CheckReport, ks_two_sample

__all__ = [
    "ParticleFront",
    "FragmentationEvent",
    "MarbleTrace",
    "BubbleSet",
    "simulate_marble",
    "extract_bubbles",
    "heights_at",
    "interior_count",
    "truncation_convergence",
    "marble_vs_vein_crosscheck",
]


@dataclass
class ParticleFront:
    time: float
    positions: np.ndarray
    ids: np.ndarray


@dataclass(frozen=True)
class FragmentationEvent:
    time: float
    lower: float
    upper: float
    left_id: int
    right_id: int


@dataclass
class MarbleTrace:
    grid: TimeGrid
    fronts: list          # ParticleFront per recorded step ([] unless recorded)
    events: list          # FragmentationEvent, chronological
    merges: list          # per step: list of (dead_ids array, survivor_id)
    config: dict
    final: ParticleFront = None
    bubble_area: float = 0.0      # spacetime area of window gaps above min_gap
    coalescence_count: int = 0


@dataclass
class BubbleSet:
    """Bubbles extracted from a trace, ordered by birth time."""

    bubbles: list

    def __len__(self):
        return len(self.bubbles)

    def containing(self, t: float, x: float) -> Bubble | None:
        for b in self.bubbles:
            if b.sigma <= t <= b.tau and b.times.size:
                lo = np.interp(t, b.times, b.lower)
                up = np.interp(t, b.times, b.upper)
                if lo < x < up:
                    return b
        return None


def _coalesce(pos: np.ndarray, ids: np.ndarray, merges: list,
              bridge_miss: np.ndarray | None = None):
    """Collapse runs of meeting adjacent particles to midpoints.

    A pair meets when its order swapped at the step end or when the
    Brownian bridge between the endpoints touched zero mid-step
    (``bridge_miss`` carries the per-pair uniform draws for that check on
    the first pass; endpoint detection alone undercounts meetings and
    inflates the surviving density by tens of percent).  Survivor keeps
    the leftmost id of each run; repeats until strictly increasing.
    """
    n_runs = 0
    while True:
        viol_mask = np.diff(pos) <= 0.0
        if bridge_miss is not None:
            viol_mask |= ~bridge_miss
            bridge_miss = None
        viol = np.flatnonzero(viol_mask)
        if viol.size == 0:
            return pos, ids, n_runs
        breaks = np.flatnonzero(np.diff(viol) > 1)
        starts = np.concatenate([[0], breaks + 1])
        ends = np.concatenate([breaks, [viol.size - 1]])
        keep = np.ones(pos.size, dtype=bool)
        for s, e in zip(starts, ends):
            i0, i1 = int(viol[s]), int(viol[e]) + 1
            seg = pos[i0 : i1 + 1]
            pos[i0] = 0.5 * (seg.min() + seg.max())
            keep[i0 + 1 : i1 + 1] = False
            merges.append((ids[i0 + 1 : i1 + 1].copy(), int(ids[i0])))
            n_runs += 1
        pos = pos[keep]
        ids = ids[keep]


def simulate_marble(
    rate: RateFunction,
    window: tuple[float, float],
    grid: TimeGrid,
    delta: float,
    rng: RngStream,
    margin: float | None = None,
    record_fronts: bool = False,
    min_gap: float = 0.01,
) -> MarbleTrace:
    """Run one marble replica on an enlarged window.

    The initial front is a lattice of spacing ``delta`` spanning the
    window plus ``margin`` (default 4*sqrt(t1)) on each side.  Requires
    bound * dt <= 0.1 so that at most one fragmentation per gap per step
    is an accurate thinning.
    """
    rate.require_bounded()
    x_min, x_max = window
    if x_max <= x_min:
        raise ValueError("window must be nonempty")
    if delta <= 0:
        raise ValueError("delta must be positive")
    m = rate.bound
    if m * grid.dt > 0.1:
        raise ValueError(
            f"rate bound {m} times dt {grid.dt} exceeds 0.1; refine the grid"
        )
    if margin is None:
        margin = 4.0 * math.sqrt(grid.t1)
    gen = rng.generator()
    n0 = int(math.floor((x_max - x_min + 2 * margin) / delta)) + 1
    pos = x_min - margin + delta * np.arange(n0)
    ids = np.arange(n0, dtype=np.int64)
    next_id = n0
    dt = grid.dt
    root_dt = math.sqrt(dt)
    cand_p = -math.expm1(-m * dt) if m > 0 else 0.0

    fronts = []
    events = []
    merges_by_step = []
    area = 0.0
    n_coal = 0
    if record_fronts:
        fronts.append(ParticleFront(grid.t0, pos.copy(), ids.copy()))

    for step in range(grid.n_steps):
        t_next = grid.t0 + (step + 1) * dt
        gaps_old = np.diff(pos)
        pos = pos + gen.standard_normal(pos.size) * root_dt
        gaps_new = np.diff(pos)
        # difference of two unit BMs has variance 2dt over the step
        p_hit = np.exp(-np.maximum(gaps_old * gaps_new, 0.0) / dt)
        miss = gen.random(p_hit.size) >= p_hit
        step_merges: list = []
        pos, ids, runs = _coalesce(pos, ids, step_merges, bridge_miss=miss)
        n_coal += runs

        if m > 0 and pos.size > 1:
            gaps = np.diff(pos)
            u = gen.random(gaps.size)
            p_acc = cand_p * np.clip(rate(gaps) / m, 0.0, 1.0)
            hit = np.flatnonzero((u < p_acc) & (gaps > delta))
            if hit.size:
                pieces_p, pieces_i = [], []
                prev = 0
                for i in hit:
                    lo, up = pos[i], pos[i + 1]
                    events.append(FragmentationEvent(t_next, float(lo), float(up),
                                                     int(ids[i]), int(ids[i + 1])))
                    k = math.ceil((up - lo) / delta)
                    interior = np.linspace(lo, up, k + 1)[1:-1]
                    pieces_p.extend([pos[prev : i + 1], interior])
                    new_ids = np.arange(next_id, next_id + interior.size, dtype=np.int64)
                    next_id += interior.size
                    pieces_i.extend([ids[prev : i + 1], new_ids])
                    prev = i + 1
                pieces_p.append(pos[prev:])
                pieces_i.append(ids[prev:])
                pos = np.concatenate(pieces_p)
                ids = np.concatenate(pieces_i)

        if pos.size > 1:
            gaps = np.diff(pos)
            left = np.clip(pos[:-1], x_min, x_max)
            right = np.clip(pos[1:], x_min, x_max)
            vis = (gaps > min_gap) & (right > left)
            area += dt * float(np.sum(right[vis] - left[vis]))

        merges_by_step.append(step_merges)
        if record_fronts:
            fronts.append(ParticleFront(t_next, pos.copy(), ids.copy()))

    return MarbleTrace(
        grid=grid,
        fronts=fronts,
        events=events,
        merges=merges_by_step,
        config={
            "rate": repr(rate), "window": (x_min, x_max), "delta": delta,
            "margin": margin, "min_gap": min_gap, "seed": rng.seed,
            "stream_id": rng.stream_id,
        },
        final=ParticleFront(grid.t1, pos, ids),
        bubble_area=area,
        coalescence_count=n_coal,
    )


def heights_at(front: ParticleFront, xs) -> np.ndarray:
    """Gap width of the front's interval containing each query position."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    idx = np.searchsorted(front.positions, xs)
    out = np.full(xs.size, np.nan)
    ok = (idx > 0) & (idx < front.positions.size)
    out[ok] = front.positions[idx[ok]] - front.positions[idx[ok] - 1]
    return out


def interior_count(front: ParticleFront, a: float, b: float) -> int:
    """Number of particles with position in [a, b]."""
    lo = np.searchsorted(front.positions, a, side="left")
    hi = np.searchsorted(front.positions, b, side="right")
    return int(hi - lo)


@dataclass
class _OpenGap:
    sigma: float
    times: list
    lower: list
    upper: list


def extract_bubbles(trace: MarbleTrace) -> "BubbleSet":
    """Replay recorded fronts into the set of maximal persistent gaps.

    A gap keyed by its (left id, right id) boundary pair survives merges of
    its boundary particles with outside particles; it dies Coalesced when
    its own boundaries merge and Fragmented when its interval fragments.
    Gaps alive at the horizon are right-censored.
    """
    if not trace.fronts:
        raise ValueError("trace was recorded without fronts")
    fronts = trace.fronts
    frag_by_step: dict[int, dict] = {}
    dt = trace.grid.dt
    for ev in trace.events:
        step = int(round((ev.time - trace.grid.t0) / dt))
        frag_by_step.setdefault(step, {})[(ev.left_id, ev.right_id)] = ev

    open_gaps: dict[tuple[int, int], _OpenGap] = {}
    closed: list[Bubble] = []

    def gap_keys(front):
        return list(zip(front.ids[:-1].tolist(), front.ids[1:].tolist()))

    first = fronts[0]
    for (a, b), lo, up in zip(gap_keys(first), first.positions[:-1], first.positions[1:]):
        open_gaps[(a, b)] = _OpenGap(first.time, [first.time], [lo], [up])

    for step in range(1, len(fronts)):
        front = fronts[step]
        resolve = {}
        for dead_ids, survivor in trace.merges[step - 1]:
            for d in dead_ids.tolist():
                resolve[d] = survivor

        def root(i):
            while i in resolve:
                i = resolve[i]
            return i

        frags = frag_by_step.get(step, {})
        pos_of = dict(zip(front.ids.tolist(), front.positions.tolist()))
        survivors: dict[tuple[int, int], _OpenGap] = {}
        for (a, b), g in open_gaps.items():
            ra, rb = root(a), root(b)
            if ra == rb:
                closed.append(_finish(g, front.time, DeathKind.COALESCED))
            elif (ra, rb) in frags:
                ev = frags[(ra, rb)]
                closed.append(_finish(g, ev.time, DeathKind.FRAGMENTED))
            else:
                g.times.append(front.time)
                g.lower.append(pos_of[ra])
                g.upper.append(pos_of[rb])
                survivors[(ra, rb)] = g
        for key, lo, up in zip(gap_keys(front), front.positions[:-1], front.positions[1:]):
            if key not in survivors:
                survivors[key] = _OpenGap(front.time, [front.time], [lo], [up])
        open_gaps = survivors

    horizon = fronts[-1].time
    for g in open_gaps.values():
        b = _finish(g, horizon, None)
        b.censored = True
        closed.append(b)
    closed.sort(key=lambda b: (b.sigma, b.times[0] if b.times.size else b.sigma))
    return BubbleSet(closed)


def _finish(g: _OpenGap, tau: float, kind) -> Bubble:
    return Bubble(
        sigma=g.sigma, tau=tau,
        times=np.asarray(g.times), lower=np.asarray(g.lower),
        upper=np.asarray(g.upper), death_kind=kind, censored=False,
    )


def truncation_convergence(
    lam: float,
    window: tuple[float, float],
    t: float,
    delta: float,
    levels,
    n_replicas: int,
    rng: RngStream,
    z_x: float | None = None,
    min_gap: float = 0.01,
) -> dict:
    """Coupled-seed marbles along a truncation ladder.

    Per level, reports the empirical bubble heights at the fixed point
    (t, z_x) and the spacetime fraction of the window covered by gaps
    above ``min_gap``.  Supercritical rates should drive the area fraction
    down the ladder; subcritical ones should stabilize the height law.
    """
    from marblesim.rates import TruncatedPowerLaw

    if lam < 0:
        raise ValueError("lam must be nonnegative")
    levels = [float(n) for n in levels]
    if len(levels) < 2:
        raise ValueError("need at least 2 truncation levels")
    if z_x is None:
        z_x = 0.5 * (window[0] + window[1])
    heights: dict[float, np.ndarray] = {}
    areas: dict[float, float] = {}
    span = (window[1] - window[0]) * t
    for level in levels:
        rate = TruncatedPowerLaw(lam, level)
        dt = min(0.1 / rate.bound, (10.0 * delta) ** 2)
        grid = TimeGrid.regular(0.0, t, max(int(round(t / dt)), 1))
        hs, area = [], 0.0
        for rep in range(n_replicas):
            tr = simulate_marble(rate, window, grid, delta,
                                 rng.child(rep), min_gap=min_gap)
            hs.append(heights_at(tr.final, [z_x])[0])
            area += tr.bubble_area
        heights[level] = np.asarray(hs)
        areas[level] = area / (n_replicas * span)
    pairs = list(zip(levels, levels[1:]))
    ks_pairs = {(a, b): ks_two_sample(heights[a], heights[b]) for a, b in pairs}
    return {
        "heights_by_level": heights,
        "area_fraction_by_level": areas,
        "ks_consecutive": ks_pairs,
        "area_decreasing": all(areas[b] < areas[a] for a, b in pairs),
    }


def marble_vs_vein_crosscheck(
    lam: float,
    n: float,
    t: float,
    rng: RngStream,
    delta: float = 1e-3,
    n_marble: int = 2000,
    n_vein: int = 20000,
    z_spacing: float = 4.0,
    z_per_replica: int = 15,
    threshold: float = 0.05,
) -> CheckReport:
    """Two-sample KS between marble bubble heights at fixed spacetime
    points and gaps of the vein run with the same rate.

    The vein is the semi-exact reference for the marble's resolution bias.
    Heights are read at ``z_per_replica`` points per marble replica,
    spaced ``z_spacing`` apart (wide against the height scale, so samples
    decorrelate).
    """
    from marblesim.rates import TruncatedPowerLaw
    from marblesim.vein import sample_vein_stats

    rate = TruncatedPowerLaw(lam, n)
    half = 0.5 * z_per_replica * z_spacing
    window = (-half, half)
    dt = min(0.1 / rate.bound, (10.0 * delta) ** 2)
    grid = TimeGrid.regular(0.0, t, max(int(round(t / dt)), 1))
    xs = (np.arange(z_per_replica) - 0.5 * (z_per_replica - 1)) * z_spacing
    n_reps = max(n_marble // z_per_replica, 1)
    hs = []
    for rep in range(n_reps):
        tr = simulate_marble(rate, window, grid, delta, rng.child(rep))
        hs.append(heights_at(tr.final, xs))
    marble_heights = np.concatenate(hs)
    marble_heights = marble_heights[np.isfinite(marble_heights)]
    vein = sample_vein_stats(rate, t, n_vein, rng.child(10_000_000))
    ks = ks_two_sample(marble_heights, vein.gap)
    return CheckReport(
        name="marble_vs_vein_heights",
        statistic=ks,
        threshold=threshold,
        passed=ks < threshold,
        meta={"lam": lam, "n": n, "t": t, "delta": delta, "dt": grid.dt,
              "n_marble": int(marble_heights.size), "n_vein": n_vein},
    )
