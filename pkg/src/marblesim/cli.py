"""Command-line front end: reproducible experiments with CSV/JSON/PPM output.

Subcommands: bessel, vein, marble, branching, sweep.  Every output file
starts with a provenance header (config echo, package version, seed); a
rerun with the same config is byte-identical.  All randomness derives
from one root seed: replicas are partitioned into fixed-size batches and
batch j of module m uses stream_id = m * 2**32 + j, independent of the
worker count.

Exit codes: 0 pass, 1 a law check failed, 2 usage or config error,
3 runtime abort (population cap).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

import marblesim
from marblesim import analysis
from marblesim.analysis import CheckReport, ks_critical_value, ks_distance, lambda_params
from marblesim.rates import Constant, HalfLambdaTrunc, PowerLaw, TruncatedPowerLaw
from marblesim.stochastics import RngStream, TimeGrid

MODULE_TAGS = {"bessel": 1, "vein": 2, "marble": 3, "branching": 4, "sweep": 5}
BATCH = 4096

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_ABORT = 3


class ConfigError(Exception):
    pass


def _stream(seed: int, command: str, batch_index: int) -> RngStream:
    return RngStream(seed, MODULE_TAGS[command] * 2**32 + batch_index)


def _workers(args) -> int:
    if args.workers is not None:
        return max(args.workers, 1)
    return max(int(os.environ.get("MARBLESIM_WORKERS", "1")), 1)


def _batched(n_total: int, run_one, workers: int):
    """Run batches in index order; the partition never depends on workers."""
    spans = [(j, lo, min(lo + BATCH, n_total))
             for j, lo in enumerate(range(0, n_total, BATCH))]
    if workers <= 1:
        return [run_one(j, hi - lo) for j, lo, hi in spans]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(run_one, j, hi - lo) for j, lo, hi in spans]
        return [f.result() for f in futs]


def _rate_from(args, bounded_for: str):
    kind = args.rate
    if kind == "power":
        if args.n is None:
            raise ConfigError(f"{bounded_for}: power-law rate needs a truncation --n")
        return TruncatedPowerLaw(args.lam, args.n)
    if kind == "half":
        return HalfLambdaTrunc(args.lam)
    if kind == "constant":
        return Constant(args.r0)
    raise ConfigError(f"unknown rate kind {kind!r}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _provenance(args, command: str) -> list[str]:
    keys = sorted(k for k in vars(args)
                  if k not in ("func", "config", "out", "command"))
    lines = [f"# marblesim {marblesim.__version__}", f"# command={command}"]
    lines += [f"# {k}={_fmt(getattr(args, k))}" for k in keys]
    return lines


def _write_csv(path, header_lines, columns, rows):
    with open(path, "w", encoding="ascii", newline="") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_report(path, args, command, reports: list[CheckReport], extra=None):
    payload = {
        "version": marblesim.__version__,
        "command": command,
        "config": {k: getattr(args, k) for k in sorted(vars(args))
                   if k not in ("func", "config", "out", "command")},
        "checks": [r.to_dict() for r in reports],
        "pass": all(r.passed for r in reports),
    }
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return payload["pass"]


def cmd_bessel(args) -> int:
    from marblesim.rbessel import sample_endpoint_stats

    rate = _rate_from(args, "bessel")
    workers = _workers(args)
    dt = args.dt if args.dt is not None else 1e-3 * args.t

    def run_one(j, count):
        return sample_endpoint_stats(rate, args.t, count,
                                     _stream(args.seed, "bessel", j), dt=dt)

    parts = _batched(args.replicas, run_one, workers)
    x = np.concatenate([p.x_t for p in parts])
    sig = np.concatenate([p.sigma for p in parts])
    nj = np.concatenate([p.n_jumps for p in parts])
    mx = np.concatenate([p.max_excursion for p in parts])

    os.makedirs(args.out, exist_ok=True)
    rows = [(i, args.n, args.lam, args.t, x[i], sig[i], int(nj[i]), mx[i])
            for i in range(x.size)]
    _write_csv(os.path.join(args.out, "bessel.csv"), _provenance(args, "bessel"),
               ["replica", "n", "lambda", "t", "x_t", "sigma_t", "n_jumps",
                "max_excursion"], rows)

    reports = []
    if args.lam < 6.0 and args.lam > 0:
        thr = args.ks_threshold
        ks_beta = ks_distance(sig / args.t, analysis.start_fraction_cdf(args.lam))
        reports.append(CheckReport("ks_beta", ks_beta, thr, ks_beta < thr,
                                   meta={"law": "Beta(beta, 1-beta) for sigma/t"}))
        age = args.t - sig
        ks_cond = ks_distance(np.square(x) / (2.0 * age),
                              analysis.endpoint_gamma_cdf(args.lam))
        reports.append(CheckReport("ks_gamma", ks_cond, thr, ks_cond < thr,
                                   meta={"law": "Gamma(alpha/2+1) for x^2/(2(t-sigma))"}))
        ks_marg = ks_distance(np.square(x) / (2.0 * args.t),
                              analysis.height_square_cdf(args.lam))
        reports.append(CheckReport("ks_marginal", ks_marg, thr, ks_marg < thr,
                                   meta={"law": "Beta(1-b,b)*Gamma(a/2+1) product for x^2/(2t)"}))
    ok = _write_report(os.path.join(args.out, "bessel_report.json"), args,
                       "bessel", reports)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_vein(args) -> int:
    from marblesim.vein import continue_bubbles, sample_vein_stats, uniformity_check

    rate = _rate_from(args, "vein")
    workers = _workers(args)
    dt = args.dt if args.dt is not None else 1e-3 * args.t

    def run_one(j, count):
        stream = _stream(args.seed, "vein", j)
        stats = sample_vein_stats(rate, args.t, count, stream, dt=dt)
        tau, death, _ = continue_bubbles(
            stats.lower, stats.upper, rate, args.t, stream.child(1), dt,
            horizon=args.t * (1.0 + args.continuation),
        )
        return stats, tau, death

    parts = _batched(args.replicas, run_one, workers)
    low = np.concatenate([p[0].lower for p in parts])
    cen = np.concatenate([p[0].center for p in parts])
    up = np.concatenate([p[0].upper for p in parts])
    sig = np.concatenate([p[0].sigma for p in parts])
    tau = np.concatenate([p[1] for p in parts])
    death = np.concatenate([p[2] for p in parts])
    kind = np.where(death == 0, "coalesced", np.where(death == 1, "fragmented", "censored"))

    os.makedirs(args.out, exist_ok=True)
    rows = [(i, args.lam, args.n, args.t, low[i], cen[i], up[i], sig[i], tau[i], kind[i])
            for i in range(low.size)]
    _write_csv(os.path.join(args.out, "vein.csv"), _provenance(args, "vein"),
               ["replica", "lambda", "n", "t", "l_t", "c_t", "u_t", "sigma",
                "tau", "death_kind"], rows)

    stats = parts[0][0]
    stats.lower, stats.center, stats.upper, stats.sigma = low, cen, up, sig
    reports = [uniformity_check(stats)]
    gap = up - low
    if args.lam == 0.0 or isinstance(rate, Constant):
        ks0 = ks_distance(np.square(gap) / (4.0 * args.t),
                          lambda z: analysis.reg_inc_gamma(1.5, np.maximum(z, 0.0)))
        thr = 2.0 * ks_critical_value(gap.size)
        reports.append(CheckReport("ks_bessel3", ks0, thr, ks0 < thr,
                                   meta={"law": "gap^2/(4t) ~ Gamma(3/2) at rate 0"}))
    elif 0.0 < args.lam < 6.0:
        thr = args.ks_threshold
        ks_b = ks_distance(sig / args.t, analysis.start_fraction_cdf(args.lam))
        reports.append(CheckReport("ks_beta", ks_b, thr, ks_b < thr,
                                   meta={"law": "Beta(beta,1-beta) for sigma/t"}))
        ks_h = ks_distance(np.square(gap) / (4.0 * args.t),
                           analysis.height_square_cdf(args.lam))
        reports.append(CheckReport("ks_height", ks_h, thr, ks_h < thr,
                                   meta={"law": "gap^2/(4t) ~ Beta-Gamma product"}))
    ok = _write_report(os.path.join(args.out, "vein_report.json"), args, "vein", reports)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_marble(args) -> int:
    from marblesim.marble import extract_bubbles, heights_at, simulate_marble

    rate = _rate_from(args, "marble")
    dt = args.dt if args.dt is not None else (10.0 * args.delta) ** 2
    if args.delta > math.sqrt(dt):
        raise ConfigError(f"delta {args.delta} exceeds sqrt(dt) = {math.sqrt(dt):.3g}")
    if rate.bound * dt > 0.1:
        raise ConfigError(
            f"rate bound {rate.bound} times dt {dt} exceeds 0.1; refine the grid")
    window = (-0.5 * args.window, 0.5 * args.window)
    grid = TimeGrid.regular(0.0, args.t, max(int(round(args.t / dt)), 1))
    os.makedirs(args.out, exist_ok=True)

    heights = []
    event_rows = []
    for rep in range(args.replicas):
        want_fronts = args.render and rep == 0
        trace = simulate_marble(rate, window, grid, args.delta,
                                _stream(args.seed, "marble", rep),
                                record_fronts=want_fronts)
        heights.append(heights_at(trace.final, [0.0])[0])
        for ev in trace.events:
            event_rows.append((rep, "fragment", ev.time, ev.lower, ev.upper))
        if want_fronts:
            from marblesim.render import render_marble, write_ppm, write_svg

            bubbles = extract_bubbles(trace) if args.fill_bubbles else None
            ras = render_marble(trace, bubbles=bubbles,
                                size=(args.image_width, args.image_height),
                                palette_seed=args.seed)
            write_ppm(ras, os.path.join(args.out, "marble.ppm"))
            if args.svg:
                write_svg(trace, os.path.join(args.out, "marble.svg"),
                          size=(args.image_width, args.image_height))

    _write_csv(os.path.join(args.out, "marble_events.csv"),
               _provenance(args, "marble"),
               ["replica", "event_kind", "time", "lower", "upper"], event_rows)
    heights = np.asarray(heights, dtype=float)
    ok = _write_report(
        os.path.join(args.out, "marble_report.json"), args, "marble", [],
        extra={"height_at_origin": {
            "mean": float(np.nanmean(heights)),
            "n": int(np.isfinite(heights).sum()),
        }},
    )
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_branching(args) -> int:
    from marblesim.branching import many_to_one_check, simulate_population

    rate = _rate_from(args, "branching")
    dt = args.dt if args.dt is not None else 1e-3 * args.t
    grid = TimeGrid.regular(0.0, args.t, max(int(round(args.t / dt)), 1))
    os.makedirs(args.out, exist_ok=True)

    rows = []
    stride = max(grid.n_steps // 20, 1)
    for rep in range(min(args.replicas, 64)):
        res = simulate_population(rate, args.pieces, [args.mass], grid,
                                  _stream(args.seed, "branching", rep),
                                  cap=args.cap)
        for k in range(0, len(res.states), stride):
            st = res.states[k]
            rows.append((rep, st.time, st.n_alive, st.total_mass))
        if res.capped:
            _write_csv(os.path.join(args.out, "branching.csv"),
                       _provenance(args, "branching"),
                       ["replica", "time", "n_alive", "total_mass"], rows)
            print(f"replica {rep} exceeded the particle cap {args.cap}",
                  file=sys.stderr)
            return EXIT_ABORT
    _write_csv(os.path.join(args.out, "branching.csv"),
               _provenance(args, "branching"),
               ["replica", "time", "n_alive", "total_mass"], rows)

    rep = many_to_one_check(rate, args.pieces, args.mass, args.t,
                            lambda x: x * np.exp(-x), args.replicas,
                            _stream(args.seed, "branching", 1_000_000), dt=dt)
    ok = _write_report(os.path.join(args.out, "branching_report.json"),
                       args, "branching", [rep])
    if rep.meta.get("invalid"):
        return EXIT_ABORT
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_sweep(args) -> int:
    from marblesim.analysis import ks_two_sample
    from marblesim.rbessel import sample_ladder_stats

    if args.lam < 0:
        raise ConfigError("lambda must be nonnegative")
    levels = [float(v) for v in args.levels.split(",")]
    dt = args.dt if args.dt is not None else 1e-3 * args.t
    stats = sample_ladder_stats(args.lam, args.t, levels, args.replicas,
                                _stream(args.seed, "sweep", 0), dt=dt,
                                resolve_straddler=args.lam >= 6.0)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    med, q90 = {}, {}
    for level, s in stats.items():
        med[level] = float(np.median(s.x_t))
        q90[level] = float(np.quantile(s.max_excursion, 0.9))
        rows.append((args.lam, level, args.t, med[level], q90[level]))
    _write_csv(os.path.join(args.out, "sweep.csv"), _provenance(args, "sweep"),
               ["lambda", "level", "t", "median_x", "q90_max_excursion"], rows)

    reports = []
    pairs = list(zip(levels, levels[1:]))
    if args.lam >= 6.0:
        dec_med = all(med[b] < med[a] for a, b in pairs)
        dec_q = all(q90[b] < q90[a] for a, b in pairs)
        reports.append(CheckReport("median_decline", float(dec_med), 1.0, dec_med,
                                   meta={"medians": med}))
        reports.append(CheckReport("max_excursion_decline", float(dec_q), 1.0, dec_q,
                                   meta={"q90": q90}))
    else:
        a, b = pairs[-1]
        ks = ks_two_sample(stats[a].x_t, stats[b].x_t)
        thr = args.ks_threshold
        reports.append(CheckReport("stability_ks", ks, thr, ks < thr,
                                   meta={"levels": [a, b]}))
    ok = _write_report(os.path.join(args.out, "sweep_report.json"), args,
                       "sweep", reports)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _load_config(path) -> dict:
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"malformed config line: {line!r}")
                key, val = line.split("=", 1)
                out[key.strip().replace("-", "_")] = val.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return out


def _apply_config(parser, args, argv):
    if not args.config:
        return args
    cfg = _load_config(args.config)
    provided = {a.split("=")[0].lstrip("-").replace("-", "_")
                for a in argv if a.startswith("--")}
    for key, raw in cfg.items():
        if key in provided or not hasattr(args, key):
            continue
        current = getattr(args, key)
        if isinstance(current, bool):
            setattr(args, key, raw.lower() in ("1", "true", "yes"))
        elif isinstance(current, int) and not isinstance(current, bool):
            setattr(args, key, int(raw))
        elif isinstance(current, float):
            setattr(args, key, float(raw))
        elif current is None:
            try:
                setattr(args, key, float(raw) if "." in raw or "e" in raw.lower()
                        else int(raw))
            except ValueError:
                setattr(args, key, raw)
        else:
            setattr(args, key, raw)
    return args


def _common(sub, *, t=1.0, replicas=1000):
    sub.add_argument("--lambda", dest="lam", type=float, default=3.0,
                     help="power-law fragmentation parameter")
    sub.add_argument("--n", type=float, default=None, help="truncation level")
    sub.add_argument("--rate", choices=("power", "half", "constant"),
                     default="power")
    sub.add_argument("--r0", type=float, default=1.0,
                     help="rate value for --rate constant")
    sub.add_argument("--t", type=float, default=t, help="time horizon")
    sub.add_argument("--dt", type=float, default=None,
                     help="grid step (default 1e-3 * t)")
    sub.add_argument("--replicas", type=int, default=replicas)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", default="out", help="output directory")
    sub.add_argument("--workers", type=int, default=None,
                     help="worker threads (default $MARBLESIM_WORKERS or 1)")
    sub.add_argument("--config", default=None, help="key=value config file")
    sub.add_argument("--ks-threshold", dest="ks_threshold", type=float,
                     default=0.03)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marblesim",
        description="Monte Carlo experiments on coalescing-fragmenting "
                    "Brownian systems",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("bessel", help="jump-diffusion marginals and law checks")
    _common(p, replicas=10000)
    p.set_defaults(func=cmd_bessel)

    p = subs.add_parser("vein", help="vein triples, bubble laws, uniformity")
    _common(p, replicas=10000)
    p.add_argument("--continuation", type=float, default=8.0,
                   help="continuation horizon as a multiple of t")
    p.set_defaults(func=cmd_vein)

    p = subs.add_parser("marble", help="full coalescing-fragmenting front")
    _common(p, t=0.5, replicas=4)
    p.add_argument("--delta", type=float, default=1e-3, help="refill spacing")
    p.add_argument("--window", type=float, default=4.0, help="window width")
    p.add_argument("--render", action="store_true", help="write marble.ppm")
    p.add_argument("--svg", action="store_true", help="also write marble.svg")
    p.add_argument("--fill-bubbles", dest="fill_bubbles", action="store_true")
    p.add_argument("--image-width", dest="image_width", type=int, default=800)
    p.add_argument("--image-height", dest="image_height", type=int, default=500)
    p.set_defaults(func=cmd_marble)

    p = subs.add_parser("branching", help="branching masses and many-to-one")
    _common(p, replicas=20000)
    p.add_argument("--pieces", type=int, default=2, help="pieces per split")
    p.add_argument("--mass", type=float, default=1.0, help="initial mass")
    p.add_argument("--cap", type=int, default=1_000_000)
    p.set_defaults(func=cmd_branching)

    p = subs.add_parser("sweep", help="truncation ladder diagnostics")
    _common(p, replicas=10000)
    p.add_argument("--levels", default="64,256,1024")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config(parser, args, argv)
        if getattr(args, "lam", 0.0) < 0:
            raise ConfigError("lambda must be nonnegative")
        if getattr(args, "replicas", 1) < 1:
            raise ConfigError("replicas must be >= 1")
        if getattr(args, "seed", 0) < 0:
            raise ConfigError("seed must be nonnegative")
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
