"""Matplotlib renderings of :mod:`divland.figures` data (Agg backend, PNG)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _col(rows, name, where=None):
    return np.array([r[name] for r in rows if where is None or where(r)], dtype=float)


def _unit_circle(ax):
    th = np.linspace(0, 2 * np.pi, 400)
    ax.plot(np.cos(th), np.sin(th), "k:", lw=0.8)
    ax.set_aspect("equal")
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")


def _plot_locus(ax, rows, key, value, label):
    sel = lambda r: r[key] == value  # noqa: E731
    for j in (1, 2, 3):
        ax.plot(_col(rows, f"re{j}", sel), _col(rows, f"im{j}", sel), lw=1.2,
                label=label if j == 1 else None)


def _time_series(fd, ax_names, group=None):
    rows = fd.tables[next(iter(fd.tables))]
    fig, axes = plt.subplots(len(ax_names), 1, sharex=True,
                             figsize=(7, 2.0 * len(ax_names)))
    groups = sorted({r[group] for r in rows}) if group else [None]
    for g in groups:
        sel = (lambda r, g=g: r[group] == g) if group else None
        t = _col(rows, "t", sel)
        for ax, name in zip(axes, ax_names):
            ax.plot(t, _col(rows, name, sel), lw=1,
                    label=f"{group}={g:g}" if group else None)
            ax.set_ylabel(name)
    axes[-1].set_xlabel("t [s]")
    if group:
        axes[0].legend(fontsize=8)
    return fig


def render(fd, path):
    """Draw the figure for ``fd`` into ``path``."""
    kind = fd.fig_id
    if kind == "fig4":
        fig = _time_series(fd, ["Z", "V_Z", "D_true"], group="gain")
    elif kind == "fig10":
        fig = _time_series(fd, ["Z", "D_hat", "cov"])
    elif kind == "fig17":
        fig = _time_series(fd, ["Z", "D_hat", "K_p", "cov"], group="D_star")
    elif kind == "fig12":
        rows = fd.tables["locus"]
        fig, axes = plt.subplots(1, 2, figsize=(10, 5))
        for ax, Z in zip(axes, (100.0, 10.0)):
            _unit_circle(ax)
            _plot_locus(ax, rows, "Z", Z, f"Z={Z:g} m")
            K_cr = next(r["K_cr"] for r in rows if r["Z"] == Z)
            ax.set_title(f"Z = {Z:g} m, K_cr = {K_cr:.0f}")
            ax.set_xlim(-1.6, 1.6)
            ax.set_ylim(-1.6, 1.6)
    elif kind == "fig14":
        rows = fd.tables["locus"]
        kappas = sorted({r["kappa"] for r in rows}, reverse=True)
        fig, axes = plt.subplots(1, len(kappas), figsize=(5 * len(kappas), 5))
        for ax, k in zip(np.atleast_1d(axes), kappas):
            _unit_circle(ax)
            _plot_locus(ax, rows, "kappa", k, None)
            ax.set_title(f"kappa = {k:g}")
            ax.set_xlim(-1.6, 1.6)
            ax.set_ylim(-1.6, 1.6)
    elif kind == "fig15":
        rows = fd.tables["trace"]
        fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8, 5))
        t = _col(rows, "t")
        axes[0].plot(t, _col(rows, "signal"), lw=0.8)
        axes[0].set_ylabel("signal")
        axes[1].plot(t, _col(rows, "cov"), lw=1)
        axes[1].axhline(fd.meta["threshold"], color="r", ls="--", lw=0.8)
        fired = _col(rows, "fired").astype(bool)
        axes[1].plot(t[fired], _col(rows, "cov")[fired], "r.", ms=3)
        axes[1].set_ylabel("lagged cov")
        axes[1].set_xlabel("t [s]")
    else:
        raise KeyError(f"no renderer for {kind!r}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_locus(rows, path, title=""):
    fig, ax = plt.subplots(figsize=(5, 5))
    _unit_circle(ax)
    for j in (1, 2, 3):
        ax.plot(_col(rows, f"re{j}"), _col(rows, f"im{j}"), lw=1.2)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_run(rows, path):
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(7, 6))
    t = _col(rows, "t")
    for ax, name in zip(axes, ("Z", "D_hat", "cov")):
        ax.plot(t, _col(rows, name), lw=1)
        ax.set_ylabel(name)
    axes[-1].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_characterization(D, D_hat, model, path):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    D = np.asarray(D, dtype=float)
    y = np.asarray(D_hat, dtype=float)
    grid = np.linspace(D.min(), D.max(), 200)
    axes[0].plot(D, y, ".", ms=2, alpha=0.4)
    axes[0].plot(grid, model.bias(grid), "r-")
    axes[0].set_xlabel("D")
    axes[0].set_ylabel("D_hat")
    axes[1].plot(D, np.abs(y - model.bias(D)), ".", ms=2, alpha=0.4)
    axes[1].plot(grid, model.spread(grid), "r-")
    axes[1].set_xlabel("D")
    axes[1].set_ylabel("|D_hat - f1(D)|")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
