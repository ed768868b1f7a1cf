"""Command-line entry point: ``divland {run,batch,characterize,stability,figure}``.

Exit codes: 0 success, 1 run failure (or a failed batch predicate),
2 configuration error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import analysis as an
from . import characterize as chz
from . import harness as hs
from .errors import ConfigError, DivlandError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        out["seed"] = str(args.seed)
    if getattr(args, "dt", None) is not None:
        out["dt"] = str(args.dt)
    return out


def _load(path, args) -> hs.Scenario:
    try:
        return hs.load_scenario(path, **_overrides(args))
    except OSError as exc:
        raise ConfigError(str(exc)) from None


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds += list(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def _print_summary(summary: dict, fh=None):
    fh = fh or sys.stdout
    for key in hs.SUMMARY_COLUMNS:
        if key in summary:
            fh.write(f"{key} = {hs._fmt(summary[key])}\n")


def cmd_run(args) -> int:
    sc = _load(args.config, args)
    res = hs.run(sc)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, sc.name)
    with open(stem + ".csv", "w", newline="") as fh:
        res.log.to_csv(fh)
    with open(stem + "_summary.csv", "w", newline="") as fh:
        hs.summaries_to_csv([res.summary], fh)
    if not args.no_plot:
        from . import plotting
        rows = [dict(zip(hs.LOG_COLUMNS, r)) for r in res.log.rows]
        for row in rows:
            if row["cov"] is None:
                row["cov"] = math.nan
        plotting.render_run(rows, stem + ".png")
    _print_summary(res.summary)
    return EXIT_OK


def _check_predicates(summaries, args) -> list[str]:
    failures = []
    n = len(summaries)
    if n == 0:
        return failures
    errors = [s for s in summaries if s.get("error")]
    if errors:
        failures.append(f"{len(errors)} run(s) raised: {errors[0]['error']}")
    ok = [s for s in summaries if not s.get("error")]

    def frac(pred):
        return sum(1 for s in ok if pred(s)) / n

    if args.require_touchdown is not None:
        f = frac(lambda s: s["touched_down"])
        if f < args.require_touchdown:
            failures.append(f"touchdown fraction {f:.3f} < {args.require_touchdown}")
    if args.require_quiet is not None:
        f = frac(lambda s: (s["post_phase1_events"] if s["post_phase1_events"] is not None
                            else s["detector_events"]) == 0)
        if f < args.require_quiet:
            failures.append(f"quiet fraction {f:.3f} < {args.require_quiet}")
    if args.require_fired is not None:
        f = frac(lambda s: s["detector_events"] > 0)
        if f < args.require_fired:
            failures.append(f"fired fraction {f:.3f} < {args.require_fired}")
    if args.max_touchdown_speed is not None:
        f = frac(lambda s: s["touched_down"]
                 and s["touchdown_speed"] < args.max_touchdown_speed)
        need = args.require_touchdown if args.require_touchdown is not None else 1.0
        if f < need:
            failures.append(f"slow-touchdown fraction {f:.3f} < {need}")
    if args.max_median_cov is not None:
        covs = [s["median_abs_cov"] for s in ok if s.get("median_abs_cov") is not None]
        if covs and float(np.median(covs)) > args.max_median_cov:
            failures.append(f"median |cov| {np.median(covs):.2e} > {args.max_median_cov}")
    return failures


def cmd_batch(args) -> int:
    scenarios = []
    seeds = _parse_seeds(args.seeds) if args.seeds else []
    if seeds:
        args.seed = seeds[0]   # satisfies validation; the sweep replaces it
    for path in args.configs:
        sc = _load(path, args)
        if seeds:
            scenarios += hs.seed_sweep(sc, seeds)
        else:
            scenarios.append(sc)
    summaries = hs.batch(scenarios, workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, args.name + ".csv")
    with open(path, "w", newline="") as fh:
        hs.summaries_to_csv(summaries, fh)
    print(f"{len(summaries)} run(s) -> {path}")
    failures = _check_predicates(summaries, args)
    for msg in failures:
        print(f"FAIL {msg}", file=sys.stderr)
    return EXIT_FAIL if failures else EXIT_OK


def cmd_characterize(args) -> int:
    try:
        log = chz.read_paired_log(args.log)
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    lag, model, stats = chz.characterize_log(log, window=args.window,
                                             max_shift=args.max_shift,
                                             prefilter=args.prefilter or None)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, os.path.splitext(os.path.basename(args.log))[0])
    with open(stem + "_noise_model.txt", "w") as fh:
        fh.write(f"# lag = {lag}\n")
        for k, v in model.as_dict().items():
            fh.write(f"{k} = {v!r}\n")
    if not args.no_plot:
        from . import plotting
        D = log.truth[:len(log.truth) - lag] if lag else log.truth
        plotting.render_characterization(D, log.estimate[lag:], model, stem + "_noise_model.png")
    print(f"lag = {lag}")
    for k, v in model.as_dict().items():
        print(f"{k} = {v:.6g}")
    print(f"rmse_raw = {stats.rmse_raw:.6g}")
    print(f"rmse_corrected = {stats.rmse_corrected:.6g}")
    return EXIT_OK


def cmd_stability(args) -> int:
    point = an.LinearizationPoint(args.Z, args.V, args.dt)
    K_cr = an.critical_gain(point)
    kmin = args.kmin if args.kmin is not None else 1e-3 * K_cr
    kmax = args.kmax if args.kmax is not None else 2.0 * K_cr
    if not 0 < kmin < kmax:
        raise ConfigError("need 0 < kmin < kmax")
    gains = np.geomspace(kmin, kmax, args.n)
    rows = an.locus_rows(gains, an.root_locus(point, args.kappa, gains))
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, "stability")
    an.write_locus_csv(rows, stem + "_locus.csv")
    s01, s02 = an.zeros(point, args.kappa)
    print(f"K_cr = {K_cr:.6g}")
    print(f"sigma_01 = {s01:.6g}")
    print(f"sigma_02 = {s02:.6g}")
    print(f"instability_threshold = {an.instability_threshold(point, args.kappa, kmin, kmax):.6g}")
    if args.sim_map:
        factors = (0.25, 0.5, 0.75, 0.9, 0.95, 1.05, 1.1, 1.25, 1.5, 2.0)
        grid = hs.stability_grid([args.Z], factors, args.dt)
        from .figures import write_table
        write_table(grid, stem + "_simmap.csv")
        agree = sum(r["sim_grows"] == r["analysis_unstable"] for r in grid)
        print(f"sim_vs_analysis_agreement = {agree}/{len(grid)}")
    if not args.no_plot:
        from . import plotting
        plotting.render_locus(rows, stem + "_locus.png",
                              f"Z={args.Z:g} V={args.V:g} kappa={args.kappa:g}")
    return EXIT_OK


def cmd_figure(args) -> int:
    from . import figures
    if args.id not in figures.FIGURE_IDS:
        raise ConfigError(f"unknown figure {args.id!r}; choose from {', '.join(figures.FIGURE_IDS)}")
    fd = figures.build(args.id, seed=args.seed or 0, dt=args.dt)
    for p in figures.write_figure(fd, args.out, plot=not args.no_plot):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="divland", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--dt", type=float, default=None)
        if seed:
            sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--no-plot", action="store_true", help="skip the PNG")

    r = sub.add_parser("run", help="run one scenario file")
    r.add_argument("config")
    r.add_argument("--set", action="append", metavar="KEY=VALUE")
    common(r)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("batch", help="run scenarios or a seed sweep")
    b.add_argument("configs", nargs="*")
    b.add_argument("--seeds", help="e.g. 0-49 or 1,2,5")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--name", default="batch")
    b.add_argument("--set", action="append", metavar="KEY=VALUE")
    b.add_argument("--require-touchdown", type=float)
    b.add_argument("--require-quiet", type=float)
    b.add_argument("--require-fired", type=float)
    b.add_argument("--max-touchdown-speed", type=float)
    b.add_argument("--max-median-cov", type=float)
    b.add_argument("--out", default=".")
    b.add_argument("--dt", type=float, default=None)
    b.set_defaults(func=cmd_batch, seed=None)

    c = sub.add_parser("characterize", help="fit lag and noise model to a t,truth,estimate CSV")
    c.add_argument("log")
    c.add_argument("--window", type=int, default=chz.DEFAULT_WINDOW)
    c.add_argument("--max-shift", type=int, default=chz.DEFAULT_MAX_SHIFT)
    c.add_argument("--prefilter", type=int, default=5, help="median window; 0 disables")
    c.add_argument("--out", default=".")
    c.add_argument("--no-plot", action="store_true")
    c.set_defaults(func=cmd_characterize)

    s = sub.add_parser("stability", help="root locus and critical gain at one operating point")
    s.add_argument("--Z", type=float, required=True)
    s.add_argument("--V", type=float, default=0.0)
    s.add_argument("--dt", type=float, default=0.05)
    s.add_argument("--kappa", type=float, default=math.inf)
    s.add_argument("--kmin", type=float)
    s.add_argument("--kmax", type=float)
    s.add_argument("--n", type=int, default=400)
    s.add_argument("--sim-map", action="store_true",
                   help="also simulate growth on a gain grid at hover")
    s.add_argument("--out", default=".")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_stability)

    f = sub.add_parser("figure", help="write the data (and PNG) for one figure")
    f.add_argument("id")
    common(f)
    f.set_defaults(func=cmd_figure)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivlandError, ValueError, ArithmeticError) as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
