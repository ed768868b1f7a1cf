"""Data behind the landing figures, written as CSV plus a PNG.

Each ``figN`` function returns a :class:`FigureData` (named tables of
rows) and :func:`write_figure` stores every table as ``<id>[_name].csv``
next to ``<id>.png``.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import analysis as an
from . import detect
from .harness import LOG_COLUMNS, Scenario, _fmt, run

FIGURE_IDS = ("fig4", "fig10", "fig12", "fig14", "fig15", "fig17")


@dataclass
class FigureData:
    fig_id: str
    tables: dict = field(default_factory=dict)   # name -> list of row dicts
    meta: dict = field(default_factory=dict)


def _log_rows(result, extra=None):
    rows = []
    for r in result.log.rows:
        row = dict(zip(LOG_COLUMNS, r))
        if extra:
            row.update(extra)
        rows.append(row)
    return rows


def fig4(seed: int = 0, dt: float = 0.05, gains=(2.0, 5.0, 10.0)) -> FigureData:
    """Fixed-gain P landings on exact divergence, D* = -0.3, from 3 m."""
    fd = FigureData("fig4")
    rows = []
    for K in gains:
        sc = Scenario(name=f"fig4-K{K:g}", Z0=3.0, V0=0.0, mode="fixed-P", K_p=K,
                      D_star=-0.3, source="truth", dt=dt, max_duration=40.0)
        rows += _log_rows(run(sc), {"gain": K})
    fd.tables["runs"] = rows
    fd.meta.update(D_star=-0.3, Z0=3.0)
    return fd


def fig10(seed: int = 0, dt: float = 0.05) -> FigureData:
    """Fixed PI (0.6, 0.1) through a lag-2 size-noise channel, D* = -0.1."""
    sc = Scenario(name="fig10", Z0=1.5, mode="fixed-PI", K_p=0.6, K_i=0.1,
                  D_star=-0.1, source="channel", kind="size", lag=2, dt=dt,
                  max_duration=80.0, seed=seed)
    res = run(sc)
    fd = FigureData("fig10", {"run": _log_rows(res)}, dict(res.summary))
    return fd


def _locus_table(point, kappa, gains, extra):
    rows = an.locus_rows(gains, an.root_locus(point, kappa, gains))
    for row in rows:
        row.update(extra)
    return rows


def fig12(seed: int = 0, dt: float = 0.03, kappa: float = 1000.0, n: int = 300) -> FigureData:
    """Root loci at 100 m and 10 m; same geometry, gains scaled by height."""
    fd = FigureData("fig12")
    rows = []
    for Z in (100.0, 10.0):
        point = an.LinearizationPoint(Z, -0.1 * Z, dt)
        K_cr = an.critical_gain(point)
        gains = np.geomspace(1e-4, 2.0, n) * K_cr
        rows += _locus_table(point, kappa, gains, {"Z": Z, "K_cr": K_cr})
    fd.tables["locus"] = rows
    fd.meta.update(dt=dt, kappa=kappa)
    return fd


def fig14(seed: int = 0, dt: float = 0.03, Z: float = 10.0,
          kappas=(3.0, 0.015, 0.01), n: int = 300) -> FigureData:
    """Root loci for kappa above, at and below dt / 2."""
    fd = FigureData("fig14")
    point = an.LinearizationPoint(Z, 0.0, dt)
    K_cr = an.critical_gain(point)
    gains = np.geomspace(1e-4, 1.5, n) * K_cr
    rows = []
    for kappa in kappas:
        rows += _locus_table(point, kappa, gains,
                             {"kappa": kappa, "sigma_02": an.zeros(point, kappa)[1]})
    fd.tables["locus"] = rows
    fd.meta.update(Z=Z, dt=dt, K_cr=K_cr)
    return fd


def fig15(seed: int = 0, dt: float = 0.05) -> FigureData:
    """Composite oscillation signal, matched-shift covariance and DFT periods."""
    rng = np.random.default_rng(seed)
    x, segments = detect.composite_signal(rng, dt)
    verdicts = detect.evaluate_segments(x, segments, dt)
    t = np.arange(len(x)) * dt
    # covariance trace with the shift of whichever burst is nearest
    cov = np.full(len(x), np.nan)
    fired = np.zeros(len(x), dtype=bool)
    for v in verdicts:
        c, f = detect.detect_series(x, dt, v.shift, v.n_window)
        seg = v.segment
        lo = seg.start - (v.n_window + v.shift) if seg is not segments[0] else 0
        hi = seg.stop + v.n_window + v.shift
        cov[max(lo, 0):hi] = c[max(lo, 0):hi]
        fired[seg.start:hi] |= f[seg.start:hi]
    rows = [{"t": float(t[i]), "signal": float(x[i]),
             "cov": float(cov[i]), "fired": int(fired[i])} for i in range(len(x))]
    seg_rows = [{"freq": v.segment.freq, "amplitude": v.segment.amplitude,
                 "t_start": v.segment.start * dt, "t_stop": v.segment.stop * dt,
                 "dft_period": v.period, "shift": v.shift, "n_window": v.n_window,
                 "fired_inside": int(v.fired_inside),
                 "gap_false_alarms": v.gap_false_alarms} for v in verdicts]
    return FigureData("fig15", {"trace": rows, "segments": seg_rows},
                      {"threshold": detect.DEFAULT_THRESHOLD})


def fig17(seed: int = 0, dt: float = 0.05, D_stars=(-0.1, -0.2, -0.3)) -> FigureData:
    """Adaptive landings from 4 m through the lag-1 size-noise channel."""
    rows = []
    summaries = []
    for D in D_stars:
        sc = Scenario(name=f"fig17-D{D:g}", Z0=4.0, mode="adaptive", D_star=D,
                      source="channel", kind="size", lag=1, dt=dt,
                      max_duration=200.0, seed=seed)
        res = run(sc)
        rows += _log_rows(res, {"D_star": D})
        summaries.append(res.summary)
    return FigureData("fig17", {"runs": rows, "summary": summaries})


BUILDERS = {"fig4": fig4, "fig10": fig10, "fig12": fig12, "fig14": fig14,
            "fig15": fig15, "fig17": fig17}


def build(fig_id: str, seed: int = 0, dt: float | None = None) -> FigureData:
    if fig_id not in BUILDERS:
        raise KeyError(f"unknown figure {fig_id!r}; choose from {', '.join(FIGURE_IDS)}")
    kw = {"seed": seed}
    if dt is not None:
        kw["dt"] = dt
    return BUILDERS[fig_id](**kw)


def _cell(v):
    if isinstance(v, (float, np.floating)) and math.isnan(v):
        return ""
    return _fmt(v)


def write_table(rows, path):
    if not rows:
        open(path, "w").close()
        return
    names = list(rows[0].keys())
    for row in rows[1:]:
        names += [k for k in row if k not in names]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(row.get(k)) for k in names})


def write_figure(fd: FigureData, out_dir, plot: bool = True) -> list[str]:
    """Write each table as CSV and (optionally) the PNG; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, (name, rows) in enumerate(fd.tables.items()):
        stem = fd.fig_id if i == 0 else f"{fd.fig_id}_{name}"
        path = os.path.join(out_dir, stem + ".csv")
        write_table(rows, path)
        paths.append(path)
    if plot:
        from . import plotting
        png = os.path.join(out_dir, fd.fig_id + ".png")
        plotting.render(fd, png)
        paths.append(png)
    return paths
