"""CSV emission and optional matplotlib figures for the CLI commands.

All numeric cells are written with repr(), which round-trips doubles exactly
and keeps outputs byte-identical across runs and thread counts.  Figures are
rendered with the Agg backend so the CLI works headless; each figure lands
next to the CSV it illustrates.
"""

from __future__ import annotations

import csv
from collections import defaultdict

import numpy as np

__all__ = [
    "write_rows",
    "figure_path",
    "plot_terminal_curve",
    "plot_convergence",
    "plot_surface_fit",
]


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_rows(path, header, rows) -> None:
    """CSV with one header row; floats via repr for exact round-tripping."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def figure_path(csv_path, suffix: str = "") -> str:
    """PNG sibling of a CSV output path."""
    base = str(csv_path)
    if base.endswith(".csv"):
        base = base[:-4]
    return f"{base}{suffix}.png"


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_terminal_curve(xs, initial, terminal_mean, path) -> None:
    """Initial vs ensemble-mean terminal forward curve."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(xs, initial, label="initial", lw=1.5)
    ax.plot(xs, terminal_mean, label="terminal mean", lw=1.5)
    ax.set_xlabel("time to maturity (years)")
    ax.set_ylabel("forward rate")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_convergence(rows, slopes, path) -> None:
    """Log-log error ladder per scheme with the fitted slope in the legend."""
    plt = _pyplot()
    by_scheme = defaultdict(list)
    for r in rows:
        by_scheme[r.scheme].append((r.n_steps, r.abs_error))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for scheme, pts in by_scheme.items():
        ns, errs = zip(*sorted(pts))
        label = f"{scheme} (slope {slopes.get(scheme, float('nan')):.2f})"
        ax.loglog(ns, errs, marker="o", label=label)
    ax.set_xlabel("steps per year")
    ax.set_ylabel("absolute error")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_surface_fit(report, path) -> None:
    """Market vs model quotes per maturity slice after calibration."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for t in np.unique(report.maturities):
        sel = report.maturities == t
        order = np.argsort(report.strikes[sel])
        ks = report.strikes[sel][order]
        ax.plot(ks, report.market[sel][order], "o", ms=3, color="k",
                label="market" if t == np.unique(report.maturities)[0] else None)
        ax.plot(ks, report.model[sel][order], "-", lw=1,
                label=f"model T={t:g}")
    ax.set_xlabel("strike")
    ax.set_ylabel("quote")
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
