"""Figure helpers for the report stage (Agg backend, PNG output)."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Circle  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0


def set_style(font_size: int = 9):
    """Plain serif style with light axes; deterministic across runs."""
    plt.rcParams.update({
        "font.size": font_size,
        "font.family": "serif",
        "axes.titlesize": font_size + 1,
        "axes.labelsize": font_size,
        "legend.fontsize": font_size - 1,
        "legend.frameon": False,
        "xtick.direction": "in",
        "ytick.direction": "in",
        "lines.linewidth": 1.2,
        "lines.markersize": 4,
        "savefig.dpi": 150,
        "svg.hashsalt": "hmfstrata",
    })


def new_figure(width: float = 4.5, height=None):
    set_style()
    if not height:
        height = width * GOLDEN
    fig, ax = plt.subplots(figsize=(width, height))
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    return fig, ax


def save_png(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_density_curves(radii, series: dict, path, title="densities"):
    """One line per named series against the scale."""
    fig, ax = new_figure()
    for name, vals in series.items():
        ax.plot(radii, vals, marker="o", label=name)
    ax.set_xscale("log")
    ax.set_xlabel(r"$\rho$")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend()
    return save_png(fig, path)


def plot_points(points, path, title="flagged nodes", dims=(0, 1)):
    fig, ax = new_figure(4.0, 4.0)
    pts = np.atleast_2d(points)
    if pts.size:
        ax.scatter(pts[:, dims[0]], pts[:, dims[1]], s=4, color="k")
    ax.set_aspect("equal")
    ax.set_xlabel(f"$x_{dims[0] + 1}$")
    ax.set_ylabel(f"$x_{dims[1] + 1}$")
    ax.set_title(title)
    return save_png(fig, path)


def plot_loglog(x, y, path, xlabel="scale", ylabel="value", title=""):
    fig, ax = new_figure()
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    m = y > 0
    if m.any():
        ax.loglog(x[m], y[m], marker="o", color="k")
    else:
        ax.semilogx(x, y, marker="o", color="k")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    return save_png(fig, path)


def plot_series(t, y, path, xlabel="t", ylabel="", title="", logy=False):
    fig, ax = new_figure()
    ax.plot(t, y, color="k")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    return save_png(fig, path)


def plot_cover(centers, radii, labels, path, dims=(0, 1), title="cover"):
    colors = {"stop": "k", "final-good": "tab:blue", "final-bad": "tab:red"}
    fig, ax = new_figure(4.0, 4.0)
    centers = np.atleast_2d(centers)
    for c, r, lab in zip(centers, radii, labels):
        if lab not in colors:
            continue
        ax.add_patch(Circle((c[dims[0]], c[dims[1]]), r, fill=False, lw=0.5, color=colors[lab]))
    if centers.size:
        pad = max(radii)
        lo = centers[:, list(dims)].min(axis=0) - pad
        hi = centers[:, list(dims)].max(axis=0) + pad
        ax.set_xlim(lo[0], hi[0])
        ax.set_ylim(lo[1], hi[1])
    ax.set_aspect("equal")
    ax.set_title(title)
    return save_png(fig, path)
