"""Report figures rendered to PNG with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analyze import DefectMeasurement, RutMeasurement, TransverseProfile, upper_hull  # noqa: E402
from .core import ColorImage  # noqa: E402
from .stitch import ElevationMosaic  # noqa: E402

# No timestamps or version strings, so identical inputs give identical files.
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_color_mosaic(color: ColorImage, path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 8))
    ax.imshow(color.pixels, interpolation="nearest")
    ax.set_title("color mosaic")
    ax.set_axis_off()
    return _save(fig, path)


def plot_elevation(mosaic: ElevationMosaic, path, defects: Sequence[DefectMeasurement] = ()) -> Path:
    """Elevation heat map (mm) with detected defect boxes in mosaic metres."""
    grid = mosaic.along_track()
    g = mosaic.gsd / 1000.0
    ext = (0, grid.shape[1] * g, grid.shape[0] * g, 0)
    fig, ax = plt.subplots(figsize=(4, 8))
    finite = grid[np.isfinite(grid)]
    lim = max(1.0, float(np.percentile(np.abs(finite), 99.5))) if finite.size else 1.0
    im = ax.imshow(grid, cmap="RdBu", vmin=-lim, vmax=lim, extent=ext, interpolation="nearest")
    for d in defects:
        s, o = d.centroid
        ax.add_patch(plt.Rectangle((o - d.width / 2000.0, s - d.length / 2000.0),
                                   d.width / 1000.0, d.length / 1000.0,
                                   fill=False, edgecolor="k", linewidth=0.8))
    ax.set_xlabel("offset (m)")
    ax.set_ylabel("station (m)")
    fig.colorbar(im, ax=ax, label="elevation (mm)")
    return _save(fig, path)


def plot_profiles(profiles: Sequence[TransverseProfile], ruts: Sequence[RutMeasurement], path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 3.5))
    for k, (p, r) in enumerate(zip(profiles, ruts)):
        line, = ax.plot(p.offsets, p.elevations, linewidth=0.8,
                        label=f"{p.station:.2f} m: {r.depth:.1f} mm")
        h = upper_hull(p.offsets, p.elevations)
        ax.plot(p.offsets[h], p.elevations[h], linestyle="--", linewidth=0.6, color=line.get_color())
    ax.set_xlabel("offset (m)")
    ax.set_ylabel("elevation (mm)")
    if profiles:
        ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    return _save(fig, path)


def plot_fit(estimated, truth, slope: float, intercept: float, r2: float, path, unit: str = "mm") -> Path:
    est = np.asarray(estimated, dtype=float)
    tru = np.asarray(truth, dtype=float)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(tru, est, s=12)
    xs = np.array([tru.min(), tru.max()])
    ax.plot(xs, slope * xs + intercept, color="k", linewidth=0.8,
            label=f"y = {slope:.4f}x + {intercept:.2f}, R2 = {r2:.4f}")
    ax.set_xlabel(f"ground truth ({unit})")
    ax.set_ylabel(f"estimated ({unit})")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)
