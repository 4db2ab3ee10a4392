"""Figures for the report path. Everything renders off-screen to files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.tri import Triangulation  # noqa: E402

from .geometry import Mesh  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "axes.grid": True,
    "grid.alpha": 0.3,
}

# strip the software tag so repeated runs give identical files
_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def field(mesh: Mesh, values: np.ndarray, path, *, title: str = "", cmap: str = "viridis") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        tri = Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)
        pc = ax.tripcolor(tri, values, shading="gouraud", cmap=cmap)
        ax.triplot(tri, lw=0.15, color="k", alpha=0.25)
        ax.set_aspect("equal")
        ax.grid(False)
        fig.colorbar(pc, ax=ax)
        ax.set_title(title)
        return _save(fig, path)


def matrix(values: np.ndarray, path, *, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        lim = float(np.abs(values).max()) or 1.0
        im = ax.imshow(values, cmap="RdBu_r", vmin=-lim, vmax=lim)
        ax.grid(False)
        fig.colorbar(im, ax=ax)
        ax.set_title(title)
        return _save(fig, path)


def loglog(x, series: dict, path, *, xlabel: str, ylabel: str, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, y in series.items():
            y = np.abs(np.asarray(y, float))
            ok = y > 0
            ax.loglog(np.asarray(x)[ok], y[ok], "o-", label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def semilogy(x, series: dict, path, *, xlabel: str, ylabel: str, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, y in series.items():
            ax.semilogy(x, np.abs(np.asarray(y, float)), "o-", label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def pseudo_section(midpoint, spacing, rho_a, path, *, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        sc = ax.scatter(midpoint, spacing, c=rho_a, s=60, cmap="viridis", marker="s")
        ax.invert_yaxis()
        ax.set_xlabel("midpoint")
        ax.set_ylabel("spacing")
        fig.colorbar(sc, ax=ax, label="apparent resistivity")
        ax.set_title(title)
        return _save(fig, path)
