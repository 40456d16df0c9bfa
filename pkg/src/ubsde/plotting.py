"""Figures for scenario runs, rendered to PNG with the Agg backend."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_contraction(report, path, title=""):
    """Picard distances with their bounds and noise floors on a log axis."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    n = np.arange(1, report.iterations + 1)
    for ax, name in zip(axes, ("phi", "psi")):
        vals = np.asarray(getattr(report, name), dtype=float)
        bound = np.asarray(getattr(report, name + "_bound"), dtype=float)
        floor = np.asarray(getattr(report, name + "_floor"), dtype=float)
        pos = vals > 0
        ax.semilogy(n[pos], vals[pos], "o-", label=f"{name} measured")
        if bound.size and np.any(bound > 0):
            ax.semilogy(n[bound > 0], bound[bound > 0], "k--", label=f"{name} bound")
        if floor.size and np.any(floor > 0):
            ax.semilogy(n[floor > 0], floor[floor > 0], ":", color="grey", label="noise floor")
        ax.set_xlabel("iteration n")
        ax.set_title(name)
        ax.legend(fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_x0_per_alpha(sol, path, title=""):
    levels = sol.bundle.alpha.levels
    x0 = sol.x0_per_alpha[:, 0]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(levels, x0, "o-")
    ax.axhline(float(sol.x0_chimera().value[0]), color="k", ls="--", label="chimera mean")
    ax.set_xlabel("alpha")
    ax.set_ylabel("X(0)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_mean_paths(sol, path, title=""):
    """Path-mean of X and Y over time, one curve per alpha level."""
    t = sol.bundle.grid.nodes
    X = sol.X.values[..., 0].mean(axis=1)
    Y = sol.Y.values[..., 0, 0].mean(axis=1)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    cmap = plt.get_cmap("viridis")
    L = X.shape[0]
    for j in range(L):
        c = cmap(j / max(L - 1, 1))
        axes[0].plot(t, X[j], color=c)
        axes[1].plot(t[:-1], Y[j, :-1], color=c)
    axes[0].set_title("E_P X(t) per alpha")
    axes[1].set_title("E_P Y(t) per alpha")
    for ax in axes:
        ax.set_xlabel("t")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def render_all(out_dir, sol, report, name):
    paths = []
    for fname, fn, arg in (("contraction.png", plot_contraction, report),
                           ("x0_per_alpha.png", plot_x0_per_alpha, sol),
                           ("mean_paths.png", plot_mean_paths, sol)):
        p = os.path.join(out_dir, fname)
        fn(arg, p, name)
        paths.append(p)
    return paths
