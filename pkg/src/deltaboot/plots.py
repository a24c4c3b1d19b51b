"""Static SVG figures: the regression scatter and the K / B sweep bands.

Output is byte-stable for identical inputs: the SVG hash salt is fixed, no
date is embedded and text stays as ``<text>`` elements.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .compare import ols  # noqa: E402

_RC = {"svg.hashsalt": "deltaboot", "svg.fonttype": "none", "font.size": 9}
MARKER_GID = "scatter-markers"


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return Path(path)


def annotation(result):
    return (
        f"alpha = {result.alpha:.4f}\nbeta = {result.beta:.4f}\n"
        f"R^2 = {result.r_squared:.4f}\nmax eps = {result.max_epsilon:.4g}"
    )


def scatter_plot(table, path, title=None):
    """sigma_boot (y) against sigma_delta (x) with the fitted OLS line."""
    if len(table) == 0:
        raise ValueError("cannot plot an empty table")
    result = ols(table.sigma_delta, table.sigma_boot, table.epsilon)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 4.0))
        pts = ax.scatter(table.sigma_delta, table.sigma_boot, s=6, alpha=0.6, linewidths=0)
        pts.set_gid(MARKER_GID)
        xs = np.array([0.0, float(np.max(table.sigma_delta))])
        ax.plot(xs, result.alpha + result.beta * xs, color="C3", lw=1.2, gid="fitted-line")
        ax.set_xlabel("sigma_delta")
        ax.set_ylabel("sigma_boot")
        ax.text(0.03, 0.97, annotation(result), transform=ax.transAxes, va="top", ha="left", gid="annotation")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def sweep_plot(summary, path, title=None):
    """Mean and +-2 sd bands of R^2 and beta, plus max epsilon, along the sweep axis."""
    if not summary.points:
        raise ValueError("cannot plot an empty sweep")
    x = np.array(summary.values(), dtype=float)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(3, 1, figsize=(4.5, 6.5), sharex=True)
        for ax, key, label in ((axes[0], "r_squared", "R^2"), (axes[1], "beta", "beta")):
            mean, lo, hi = np.array([getattr(p, key) for p in summary.points]).T
            ax.fill_between(x, lo, hi, alpha=0.25, color="C0", lw=0)
            ax.plot(x, mean, color="C0", marker="o", ms=3)
            ax.set_ylabel(label)
        axes[2].plot(x, [p.max_epsilon for p in summary.points], color="C1", marker="o", ms=3)
        axes[2].set_ylabel("max eps")
        axes[2].set_xlabel(summary.axis)
        if title:
            axes[0].set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def emit_plots(tables, summaries, outdir):
    """Write one scatter per table and one band plot per sweep; return the paths."""
    if not tables and not summaries:
        raise ValueError("nothing to plot")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, table in sorted(tables.items()):
        paths.append(scatter_plot(table, outdir / f"scatter_{name}.svg", title=name))
    for name, summary in sorted(summaries.items()):
        paths.append(sweep_plot(summary, outdir / f"sweep_{name}.svg", title=f"sweep over {summary.axis}"))
    return paths
