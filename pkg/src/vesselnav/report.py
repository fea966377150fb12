"""Figure rendering for the report-producing commands.

Every figure is written straight to a file next to the delimited output it
mirrors; nothing here opens a window.
"""
from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .gridmap import GeoMap, ObstacleSet, Position
from .harness import MetricsRow, ToyRow
from . import toy as toy_mod


def render_metrics_figure(rows: Sequence[MetricsRow], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r.batch for r in rows], [r.ratd for r in rows], marker="o")
    ax.set_xlabel("batch")
    ax.set_ylabel("success rate (%)")
    ax.set_ylim(-2, 102)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_density_figure(counts: np.ndarray, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    im = ax.imshow(counts, origin="lower", cmap="viridis")
    fig.colorbar(im, ax=ax, label="path visits")
    ax.set_xlabel("cell x")
    ax.set_ylabel("cell y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_toy_figure(rows: Sequence[ToyRow], path) -> None:
    kinds = list(toy_mod.KINDS)
    variants = sorted({r.variant for r in rows})
    fig, axes = plt.subplots(1, len(kinds), figsize=(4 * len(kinds), 3.5),
                             sharey=True)
    for ax, kind in zip(np.atleast_1d(axes), kinds):
        for variant in variants:
            pts = [(r.epoch, r.ratd) for r in rows
                   if r.kind == kind and r.variant == variant]
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=variant)
        ax.set_title(kind)
        ax.set_xlabel("epoch")
        ax.set_ylim(-2, 102)
        ax.grid(True, alpha=0.3)
    np.atleast_1d(axes)[0].set_ylabel("success rate (%)")
    np.atleast_1d(axes)[0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_plan_figure(geomap: GeoMap, cell_path: Sequence, waypoints:
                       Sequence[Position], path,
                       obstacles: Optional[ObstacleSet] = None) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    extent = (geomap.origin_lon,
              geomap.origin_lon + geomap.width * geomap.cell_size,
              geomap.origin_lat,
              geomap.origin_lat + geomap.height * geomap.cell_size)
    ax.imshow(geomap.cells, origin="lower", cmap="Greys", extent=extent,
              interpolation="nearest")
    if cell_path:
        centers = [geomap.cell_center(c) for c in cell_path]
        ax.plot([p[0] for p in centers], [p[1] for p in centers],
                color="tab:blue", lw=1, alpha=0.7, label="cell path")
    if waypoints:
        ax.plot([p[0] for p in waypoints], [p[1] for p in waypoints],
                color="tab:red", marker="o", ms=3, lw=1.2, label="waypoints")
    if obstacles is not None and len(obstacles):
        ax.scatter([p[0] for p in obstacles.positions],
                   [p[1] for p in obstacles.positions],
                   color="tab:orange", s=12, label="obstacles")
    ax.set_xlabel("lon")
    ax.set_ylabel("lat")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_outcome_figure(row: MetricsRow, path) -> None:
    from .harness import OUTCOME_COLUMNS
    labels = [o.value for o in OUTCOME_COLUMNS]
    values = [row.outcome_counts.get(o, 0) for o in OUTCOME_COLUMNS]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(labels, values)
    ax.set_ylabel("plans")
    ax.tick_params(axis="x", labelrotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
