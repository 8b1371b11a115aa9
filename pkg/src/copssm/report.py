"""Figure rendering for the CLI report paths.

Every plotting CLI output also exists as a CSV; the figures here are the
rendered companions, written next to the delimited files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 130


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def contour_grid_figure(panels, path):
    """panels: list of (title, z1 grid, z2 grid, density matrix)."""
    n = len(panels)
    ncols = min(3, n)
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.4 * ncols, 3.1 * nrows),
                             squeeze=False, constrained_layout=True)
    for ax in axes.flat[n:]:
        ax.set_axis_off()
    for ax, (title, z1, z2, dens) in zip(axes.flat, panels):
        levels = np.linspace(0.01, max(dens.max(), 0.02), 12)
        ax.contour(z1, z2, dens.T, levels=levels, linewidths=0.8)
        ax.set_title(title, fontsize=9)
        ax.set_aspect("equal")
    return _save(fig, path)


def trace_figure(draws, path):
    """Trace plots of the tau parameters and the log posterior, by chain."""
    d = draws.d
    names = [f"tau_obs_{j + 1}" for j in range(d)] + ["tau_lat", "log_post"]
    series = [draws.tau_obs[:, j] for j in range(d)] + [draws.tau_lat, draws.log_post]
    ncols = 2
    nrows = (len(names) + 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(8.5, 1.9 * nrows),
                             squeeze=False, constrained_layout=True)
    for ax in axes.flat[len(names):]:
        ax.set_axis_off()
    chains = np.unique(draws.chain)
    for ax, name, values in zip(axes.flat, names, series):
        for c in chains:
            sel = draws.chain == c
            ax.plot(draws.iteration[sel], values[sel], lw=0.5)
        ax.set_title(name, fontsize=9)
    return _save(fig, path)


def band_figure(per_margin, path):
    """per_margin: list of (name, t, lo, median, hi, t_obs, y_obs)."""
    n = len(per_margin)
    fig, axes = plt.subplots(n, 1, figsize=(8.5, 2.2 * n), squeeze=False,
                             constrained_layout=True)
    for ax, (name, t, lo, med, hi, t_obs, y_obs) in zip(axes.flat, per_margin):
        ax.fill_between(t, lo, hi, alpha=0.3, label="90% band")
        ax.plot(t, med, lw=0.9, label="median")
        if t_obs is not None and len(t_obs):
            ax.plot(t_obs, y_obs, ".", ms=3, color="crimson", label="held-out truth")
        ax.set_title(name, fontsize=9)
        ax.legend(fontsize=7, loc="best")
    return _save(fig, path)


def score_figure(rows, path):
    """Grouped bars of cumulative CRPS; rows as from comparison_table."""
    models = sorted({r["model"] for r in rows})
    margins = sorted({r["margin"] for r in rows})
    width = 0.8 / len(models)
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(margins), 3.2), constrained_layout=True)
    for i, model in enumerate(models):
        vals = [next(r["cum_crps"] for r in rows if r["model"] == model and r["margin"] == m)
                for m in margins]
        ax.bar(np.arange(len(margins)) + i * width, vals, width, label=model)
    ax.set_xticks(np.arange(len(margins)) + 0.4 - width / 2)
    ax.set_xticklabels([f"margin {m}" for m in margins])
    ax.set_ylabel("cumulative CRPS")
    ax.legend(fontsize=8)
    return _save(fig, path)


def data_overview_figure(u, v, path):
    """Simulated copula-scale series (first margins) and the latent path."""
    T, d = u.shape
    show = min(d, 3)
    fig, axes = plt.subplots(show + 1, 1, figsize=(8.5, 1.7 * (show + 1)),
                             squeeze=False, constrained_layout=True)
    t = np.arange(T)
    for j in range(show):
        axes.flat[j].plot(t, u[:, j], lw=0.5)
        axes.flat[j].set_title(f"margin {j + 1}", fontsize=9)
    axes.flat[show].plot(t, v, lw=0.6, color="darkorange")
    axes.flat[show].set_title("latent path", fontsize=9)
    return _save(fig, path)
