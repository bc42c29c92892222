"""Figure rendering for the report paths (database, sweeps, irradiance).

Every CSV/JSONL the pipeline emits gets a PNG sibling so results can be
eyeballed without extra tooling. Rendering is optional at the CLI level and
never part of the numeric contract.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .optics import IrradianceMap


def save_irradiance_figure(irr: IrradianceMap, path, title: str | None = None) -> None:
    """Linear-scale image of the binned pattern, axes in mm."""
    xc, yc, width, height = irr.extent
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    im = ax.imshow(
        irr.grid,
        origin="lower",
        extent=(xc - width / 2, xc + width / 2, yc - height / 2, yc + height / 2),
        cmap="viridis",
        aspect="equal",
    )
    fig.colorbar(im, ax=ax, label="relative flux / bin")
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_database_figure(records, path) -> None:
    """Scatter of recorded non-uniformity over the sampled performance space."""
    ok = [r for r in records if r.error is None]
    if not ok:
        return
    fig, ax = plt.subplots(figsize=(5.6, 4.6))
    vals = [r.nonuniformity_pct for r in ok]
    if ok[0].scenario == "reflector_offset":
        xs = [r.target.x_off for r in ok]
        ys = [r.target.y_off for r in ok]
        sc = ax.scatter(xs, ys, c=vals, cmap="inferno", s=36)
        ax.set_xlabel("x offset (mm)")
        ax.set_ylabel("y offset (mm)")
    else:
        xs = [r.target.width for r in ok]
        ys = [r.target.height for r in ok]
        sc = ax.scatter(xs, ys, c=vals, cmap="inferno", s=36)
        ax.set_xlabel("width (mm)")
        ax.set_ylabel("height (mm)")
    fig.colorbar(sc, ax=ax, label="non-uniformity (%)")
    ax.set_title(f"database: {len(ok)} designs")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sweep_figure(rows: list[dict], axes: list[str], path) -> None:
    """Heatmap for two swept axes, line plot for one; skips error rows."""
    ok = [r for r in rows if not r.get("error")]
    if not ok or not axes:
        return
    if len(axes) == 1:
        name = axes[0]
        xs = [r[name] for r in ok]
        ys = [r["nonuniformity_pct"] for r in ok]
        fig, ax = plt.subplots(figsize=(5.6, 4.0))
        ax.plot(xs, ys, "o-")
        ax.set_xlabel(f"{name} (mm)")
        ax.set_ylabel("non-uniformity (%)")
        ax.grid(True, alpha=0.3)
    else:
        ax_x, ax_y = axes[0], axes[1]
        xs = sorted({r[ax_x] for r in ok})
        ys = sorted({r[ax_y] for r in ok})
        grid = np.full((len(ys), len(xs)), math.nan)
        for r in ok:
            grid[ys.index(r[ax_y]), xs.index(r[ax_x])] = r["nonuniformity_pct"]
        fig, ax = plt.subplots(figsize=(5.6, 4.6))
        im = ax.pcolormesh(xs, ys, grid, cmap="inferno", shading="nearest")
        fig.colorbar(im, ax=ax, label="non-uniformity (%)")
        ax.set_xlabel(f"{ax_x} (mm)")
        ax.set_ylabel(f"{ax_y} (mm)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
