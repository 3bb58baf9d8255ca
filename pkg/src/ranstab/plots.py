"""Figure rendering for the report path: load traces, demand vs allocation,
derivative scatter, and Gershgorin discs, written as PNG files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_load_traces(series, path, highlight=None):
    fig, ax = plt.subplots(figsize=(8, 4))
    for i in range(series.n_rus):
        lw = 1.8 if highlight is not None and i in highlight else 0.9
        ax.plot(series.times, series.loads[:, i], lw=lw, label=f"RU {i}")
    ax.axhline(1.0, color="k", ls="--", lw=0.8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("load")
    if series.n_rus <= 12:
        ax.legend(ncol=4, fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_demand_allocated(series, ru, path):
    fig, ax = plt.subplots(figsize=(8, 4))
    if series.demand is not None:
        ax.plot(series.times, series.demand[:, ru], label="demand PRBs")
    if series.allocated is not None:
        ax.plot(series.times, series.allocated[:, ru], label="allocated PRBs")
    if series.provisioned is not None:
        ax.plot(series.times, series.provisioned[:, ru], label="provisioned PRBs", ls=":")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("PRBs")
    ax.set_title(f"RU {ru}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_derivative_scatter(observed, predicted, path):
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(observed, predicted, s=4, alpha=0.4)
    lo = min(np.min(observed), np.min(predicted))
    hi = max(np.max(observed), np.max(predicted))
    ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
    ax.set_xlabel("observed load rate")
    ax.set_ylabel("model load rate")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_gershgorin(discs, eigenvalues, path):
    fig, ax = plt.subplots(figsize=(6, 6))
    for d in discs:
        ax.add_patch(
            plt.Circle((d.center, 0.0), d.radius, fill=False, color="tab:blue", lw=0.8)
        )
        ax.plot(d.center, 0.0, "b+", ms=4)
    eig = np.atleast_1d(np.asarray(eigenvalues, dtype=complex))
    ax.plot(eig.real, eig.imag, "rx", ms=6, label="eigenvalues")
    ax.axvline(0.0, color="k", lw=0.8)
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    ax.legend(fontsize=8)
    ax.set_aspect("equal")
    ax.autoscale_view()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
