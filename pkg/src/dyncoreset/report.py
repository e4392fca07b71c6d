"""Figures rendered to files next to the CSV outputs of a report run."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PatchCollection  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .coreset import Coreset  # noqa: E402
from .eval import VerificationReport  # noqa: E402

DPI = 120


def error_surface(rep: VerificationReport, path) -> None:
    """Heatmap of the relative error of a single-center scan over a 2-d lattice."""
    axis = rep.extra.get("axis")
    if axis is None or any(len(Z) != 1 or len(Z[0]) != 2 for Z in rep.centers):
        raise ValueError("error surface needs a 2-d single-center grid scan")
    n = len(axis)
    surf = rep.rel_err.reshape(n, n).T
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    im = ax.imshow(surf, origin="lower", extent=(axis[0], axis[-1], axis[0], axis[-1]), cmap="viridis")
    fig.colorbar(im, ax=ax, label="relative error")
    ax.set_xlabel("center x")
    ax.set_ylabel("center y")
    ax.set_title(f"1-median relative error (max {rep.max_rel_err:.3%})")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def coreset_layers(cs: Coreset, side: int, path) -> None:
    """Cells drawn at their level's width, shaded by weight; sampled points as dots."""
    if cs.d != 2:
        raise ValueError("layer plot needs d = 2")
    fig, ax = plt.subplots(figsize=(5.2, 5.0))
    is_point = np.array([p in ("sample", "point") for p in cs.provenance], dtype=bool)
    cells = ~is_point & (cs.levels >= 0)
    if cells.any():
        W = side / 2.0 ** cs.levels[cells]
        pos = cs.positions[cells]
        rects = [Rectangle((x - w / 2, y - w / 2), w, w) for (x, y), w in zip(pos, W)]
        coll = PatchCollection(rects, cmap="Greys", edgecolor="0.4", linewidth=0.3)
        coll.set_array(np.abs(cs.weights[cells]))
        ax.add_collection(coll)
        fig.colorbar(coll, ax=ax, label="|weight| of cell entries", shrink=0.8)
    if is_point.any():
        ax.scatter(cs.positions[is_point, 0], cs.positions[is_point, 1], s=6, c="tab:red", label="sampled points")
        ax.legend(loc="upper right", fontsize=7)
    ax.set_xlim(0, side)
    ax.set_ylim(0, side)
    ax.set_aspect("equal")
    ax.set_title(f"coreset layers ({len(cs)} entries)")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def data_scatter(points, delta: int, path) -> None:
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != 2:
        raise ValueError("scatter needs d = 2")
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.scatter(P[:, 0], P[:, 1], s=0.3, c="k", alpha=0.4, linewidths=0)
    ax.set_xlim(0, delta + 1)
    ax.set_ylim(0, delta + 1)
    ax.set_aspect("equal")
    ax.set_title(f"{len(P)} live points")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
