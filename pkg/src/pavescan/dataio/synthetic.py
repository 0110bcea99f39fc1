"""Synthetic pavement scenes with analytic ground truth.

World frame: X is the lateral offset from the lane's left edge, Y the
longitudinal station, both in mm; heights are mm, positive up.  A nadir
camera at fixed height over the zero-slope datum translates along Y.  The
surface is a (possibly tilted) plane minus a sum of defect depressions:

* ruts: Gaussian grooves ``depth * exp(-dx**2 / (2 w**2))`` with
  ``w = width / 4``, truncated at ``|dx| = width`` and cosine-tapered at
  their longitudinal ends;
* potholes: super-elliptic bowls ``depth * (1 - s)`` for ``s < 1`` with
  ``s = (|dx| / (width/2))**4 + (|dy| / (length/2))**4``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from ..core import (
    DEPTH_MAX_MM,
    DEPTH_MIN_MM,
    CameraIntrinsics,
    ColorImage,
    DepthImage,
    RGBDFrame,
)
from ..errors import DefectOutsideLane, InvariantError
from .dataset import DatasetManifest, FrameEntry, GroundTruthDefect

LANE_WIDTH_M = 3.65
POTHOLE_EXPONENT = 4
RUT_SIGMA_PER_WIDTH = 0.25
RUT_TAPER_MM = 200.0
SPECKLE_FRACTION = 0.05


@dataclass(frozen=True)
class SynthSpec:
    lane_width_m: float = LANE_WIDTH_M
    camera_height_mm: float = 800.0
    tilt: Tuple[float, float] = (0.0, 0.0)
    frame_count: int = 8
    overlap_fraction: float = 0.6
    noise_sigma0: float = 1.0
    noise_k: float = 1.5e-6
    texture_seed: int = 7
    defects: Tuple[GroundTruthDefect, ...] = ()
    seed: int = 0
    width: int = 640
    height: int = 480
    gsd_mm: float = 5.0
    travel_axis: str = "y"

    def __post_init__(self):
        object.__setattr__(self, "defects", tuple(self.defects))
        object.__setattr__(self, "tilt", (float(self.tilt[0]), float(self.tilt[1])))
        if not 0 < self.overlap_fraction < 1:
            raise InvariantError(f"overlap_fraction must lie in (0, 1), got {self.overlap_fraction}")
        if not DEPTH_MIN_MM <= self.camera_height_mm <= DEPTH_MAX_MM:
            raise InvariantError(f"camera height {self.camera_height_mm} mm outside sensor range")
        if self.frame_count < 0:
            raise InvariantError("frame_count must be non-negative")
        if self.width < 16 or self.height < 16 or self.gsd_mm <= 0:
            raise InvariantError("bad image geometry")
        if self.travel_axis not in ("x", "y"):
            raise InvariantError(f"travel_axis must be 'x' or 'y', got {self.travel_axis!r}")
        if self.noise_sigma0 < 0 or self.noise_k < 0:
            raise InvariantError("noise parameters must be non-negative")

    @property
    def focal_px(self) -> float:
        return self.camera_height_mm / self.gsd_mm

    def intrinsics(self) -> CameraIntrinsics:
        f = self.focal_px
        return CameraIntrinsics(f, f, self.width / 2.0, self.height / 2.0, self.width, self.height)

    @property
    def along_px(self) -> int:
        """Frame extent along the travel direction, in pixels."""
        return self.height if self.travel_axis == "y" else self.width

    @property
    def step_px(self) -> int:
        # floor keeps the realised overlap at or above the requested fraction
        return max(1, int(math.floor((1.0 - self.overlap_fraction) * self.along_px)))

    @property
    def step_mm(self) -> float:
        return self.step_px * self.gsd_mm

    @property
    def run_length_mm(self) -> float:
        return self.along_px * self.gsd_mm + max(0, self.frame_count - 1) * self.step_mm

    def camera_positions(self) -> List[Tuple[float, float]]:
        """(X, Y) of each camera nadir in mm."""
        intr = self.intrinsics()
        c_along = intr.cy if self.travel_axis == "y" else intr.cx
        x = self.lane_width_m * 1000.0 / 2.0
        return [(x, c_along * self.gsd_mm + i * self.step_mm) for i in range(self.frame_count)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tilt"] = list(self.tilt)
        d["defects"] = [g.to_dict() for g in self.defects]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["tilt"] = tuple(d["tilt"])
        d["defects"] = tuple(GroundTruthDefect.from_dict(g) for g in d["defects"])
        return cls(**d)


class PavementField:
    """Analytic height field of a synthetic scene."""

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.sx, self.sy = spec.tilt
        self.x_ref = spec.lane_width_m * 1000.0 / 2.0
        self.y_ref = spec.run_length_mm / 2.0
        lane = spec.lane_width_m * 1000.0
        for g in spec.defects:
            x = g.offset_m * 1000.0
            half = g.width_mm / 2.0
            if x - half < 0 or x + half > lane:
                raise DefectOutsideLane(
                    f"{g.kind} at offset {g.offset_m} m (width {g.width_mm} mm) leaves the "
                    f"{spec.lane_width_m} m lane")

    @property
    def max_depression(self) -> float:
        if not self.spec.defects:
            return 0.0
        return float(sum(g.depth_mm for g in self.spec.defects))

    def plane(self, X, Y):
        return self.sx * (np.asarray(X) - self.x_ref) + self.sy * (np.asarray(Y) - self.y_ref)

    def depression(self, X, Y) -> np.ndarray:
        """Total defect depth (>= 0) at world points."""
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        out = np.zeros(np.broadcast(X, Y).shape)
        X, Y = np.broadcast_arrays(X, Y)
        for g in self.spec.defects:
            cx, cy = g.offset_m * 1000.0, g.station_m * 1000.0
            if g.kind == "pothole":
                a, b = g.width_mm / 2.0, g.length_mm / 2.0
                m = (np.abs(X - cx) < a) & (np.abs(Y - cy) < b)
                if not m.any():
                    continue
                s = (np.abs(X[m] - cx) / a) ** POTHOLE_EXPONENT + (np.abs(Y[m] - cy) / b) ** POTHOLE_EXPONENT
                out[m] += g.depth_mm * np.clip(1.0 - s, 0.0, None)
            else:
                w = RUT_SIGMA_PER_WIDTH * g.width_mm
                y0, y1 = cy - g.length_mm / 2.0, cy + g.length_mm / 2.0
                m = (np.abs(X - cx) <= g.width_mm) & (Y > y0) & (Y < y1)
                if not m.any():
                    continue
                taper = min(RUT_TAPER_MM, g.length_mm / 4.0)
                edge = np.minimum(Y[m] - y0, y1 - Y[m])
                along = np.where(edge >= taper, 1.0,
                                 0.5 - 0.5 * np.cos(np.pi * np.clip(edge / taper, 0, 1)))
                out[m] += g.depth_mm * along * np.exp(-0.5 * ((X[m] - cx) / w) ** 2)
        return out

    def height(self, X, Y) -> np.ndarray:
        return self.plane(X, Y) - self.depression(X, Y)


def _splitmix(x: np.ndarray) -> np.ndarray:
    z = x + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def lattice_hash(i, j, seed: int) -> np.ndarray:
    """Deterministic uniform [0, 1) value per integer lattice cell."""
    i = np.asarray(i, dtype=np.int64).astype(np.uint64)
    j = np.asarray(j, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix(i ^ _splitmix(j ^ _splitmix(np.uint64(seed) + np.zeros_like(i))))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(X, Y, cell: float, seed: int) -> np.ndarray:
    fx, fy = X / cell, Y / cell
    i0, j0 = np.floor(fx), np.floor(fy)
    tx, ty = fx - i0, fy - j0
    tx = tx * tx * (3 - 2 * tx)
    ty = ty * ty * (3 - 2 * ty)
    i0, j0 = i0.astype(np.int64), j0.astype(np.int64)
    v00 = lattice_hash(i0, j0, seed)
    v10 = lattice_hash(i0 + 1, j0, seed)
    v01 = lattice_hash(i0, j0 + 1, seed)
    v11 = lattice_hash(i0 + 1, j0 + 1, seed)
    return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty


def albedo(X, Y, seed: int, gsd_mm: float) -> np.ndarray:
    """Asphalt-like reflectance in [0, 1], locked to world coordinates."""
    base = 0.6 * value_noise(X, Y, 12.0 * gsd_mm, seed) + 0.4 * value_noise(X, Y, 3.0 * gsd_mm, seed + 1)
    a = 0.12 + 0.4 * base
    # Speckle lattice is offset by half a cell so pixel centres never sit on cell edges.
    cell = 6.0 * gsd_mm
    si = np.floor(X / cell + 0.5)
    sj = np.floor(Y / cell + 0.5)
    salt = lattice_hash(si, sj, seed + 2) < SPECKLE_FRACTION
    return np.where(salt, 0.95, a)


TINT = np.array([1.0, 0.97, 0.92])


def _ray_depths(field: PavementField, xc, yc, a_lat, b_long, h0, den):
    """Depth where each pixel ray first meets the surface.

    Rays are ``(X, Y) = (xc + a_lat * d, yc + b_long * d)`` and the surface
    condition is ``d * den = h0 + depression(X, Y)``.
    """
    d = h0 / den
    D = field.depression(xc + a_lat * d, yc + b_long * d)
    todo = np.nonzero(D > 0)[0]
    if len(todo) == 0:
        return d
    ta, tb, tden, th0 = a_lat[todo], b_long[todo], den[todo], h0[todo]

    def f(dd, sel=slice(None)):
        return dd * tden[sel] - th0[sel] - field.depression(xc + ta[sel] * dd, yc + tb[sel] * dd)

    lo = d[todo].copy()
    hi = lo.copy()
    open_ = np.ones(len(todo), dtype=bool)
    step = 1.0
    limit = field.max_depression / np.min(den) + 2 * step
    n_steps = int(math.ceil(limit / step)) + 1
    for _ in range(n_steps):
        idx = np.nonzero(open_)[0]
        if len(idx) == 0:
            break
        cand = hi[idx] + step
        hit = f(cand, idx) >= 0
        lo[idx] = np.where(hit, hi[idx], cand)
        hi[idx] = cand
        open_[idx[hit]] = False
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        pos = f(mid) >= 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    d[todo] = 0.5 * (lo + hi)
    return d


def render_frame(spec: SynthSpec, field: PavementField, position, rng=None):
    """Depth (float mm, before noise) and color for a camera at ``position``.

    Returns (depth_mm, rgb uint8, X, Y).
    """
    intr = spec.intrinsics()
    vv, uu = np.mgrid[0:spec.height, 0:spec.width]
    a = ((uu - intr.cx) / intr.fx).ravel()
    b = ((vv - intr.cy) / intr.fy).ravel()
    a_lat, b_long = (a, b) if spec.travel_axis == "y" else (b, a)
    xc, yc = position
    sx, sy = field.sx, field.sy
    h0 = spec.camera_height_mm - field.plane(xc, yc) * np.ones_like(a)
    den = 1.0 + sx * a_lat + sy * b_long
    d = _ray_depths(field, xc, yc, a_lat, b_long, h0, den)
    X = xc + a_lat * d
    Y = yc + b_long * d
    refl = albedo(X, Y, spec.texture_seed, spec.gsd_mm)
    D = field.depression(X, Y)
    refl = refl * (1.0 - 0.45 * np.clip(D / 30.0, 0.0, 1.0))
    rgb = np.floor(255.0 * refl[:, None] * TINT[None, :] + 0.5)
    shape = (spec.height, spec.width)
    return (d.reshape(shape), np.clip(rgb, 0, 255).astype(np.uint8).reshape(shape + (3,)),
            X.reshape(shape), Y.reshape(shape))


def noise_sigma(spec: SynthSpec, d):
    return spec.noise_sigma0 + spec.noise_k * np.asarray(d, dtype=float) ** 2


def quantize_depth(d) -> np.ndarray:
    q = np.floor(np.asarray(d, dtype=float) + 0.5)
    q[(q < DEPTH_MIN_MM) | (q > DEPTH_MAX_MM)] = 0
    return q.astype(np.uint16)


def generate_synthetic(spec: SynthSpec):
    """Render ``spec.frame_count`` overlapping RGB-D frames.

    Returns (manifest, frames).  The manifest carries the defects as ground
    truth, each frame's camera position, and the full spec.
    """
    field = PavementField(spec)
    intr = spec.intrinsics()
    seeds = np.random.SeedSequence(spec.seed).spawn(max(spec.frame_count, 1))
    frames, entries = [], []
    for i, pos in enumerate(spec.camera_positions()):
        d, rgb, _, _ = render_frame(spec, field, pos)
        if spec.noise_sigma0 > 0 or spec.noise_k > 0:
            rng = np.random.default_rng(seeds[i])
            d = d + rng.standard_normal(d.shape) * noise_sigma(spec, d)
        frames.append(RGBDFrame(i, ColorImage(rgb), DepthImage(quantize_depth(d))))
        entries.append(FrameEntry.standard(i, position_mm=(float(pos[0]), float(pos[1]))))
    synth_meta = spec.to_dict()
    synth_meta.update(step_px=spec.step_px, focal_px=spec.focal_px,
                      rut_sigma_per_width=RUT_SIGMA_PER_WIDTH, pothole_exponent=POTHOLE_EXPONENT)
    manifest = DatasetManifest(
        frames=entries,
        depth_intr=intr,
        color_intr=intr,
        extr=None,
        ground_truth=spec.defects,
        travel_axis=spec.travel_axis,
        camera_height_mm=spec.camera_height_mm,
        synthetic=synth_meta,
    )
    return manifest, frames


def pothole(station_m, offset_m, depth_mm=50.0, width_mm=300.0, length_mm=400.0):
    return GroundTruthDefect("pothole", depth_mm, width_mm, length_mm, station_m, offset_m)


def rut(offset_m, depth_mm, width_mm, station_m, length_mm):
    return GroundTruthDefect("rut", depth_mm, width_mm, length_mm, station_m, offset_m)


def preset(name: str, seed: int = 0, **overrides) -> SynthSpec:
    """Named scenes used by the CLI and the acceptance suite."""
    base = SynthSpec(seed=seed)
    if name == "flat":
        spec = base
    elif name == "rut":
        run = base.run_length_mm
        spec = SynthSpec(seed=seed, defects=(rut(1.3, 10.0, 300.0, run / 2000.0, run),))
    elif name == "potholes":
        spec = SynthSpec(seed=seed, frame_count=10, defects=tuple(pothole_layout()))
    else:
        raise ValueError(f"unknown preset {name!r}")
    if overrides:
        d = spec.to_dict()
        d.update(overrides)
        if "defects" in overrides:
            d["defects"] = [g.to_dict() if isinstance(g, GroundTruthDefect) else g
                            for g in overrides["defects"]]
        spec = SynthSpec.from_dict(d)
    return spec


def pothole_layout() -> List[GroundTruthDefect]:
    """Ten potholes of assorted sizes, 1 m apart, alternating wheel paths."""
    sizes = [(50, 300, 400), (40, 260, 360), (60, 340, 420), (45, 280, 300), (55, 320, 450),
             (35, 240, 340), (50, 360, 380), (42, 300, 320), (58, 280, 440), (48, 320, 360)]
    out = []
    for i, (dep, w, l) in enumerate(sizes):
        station = 1.0 + 1.0 * i
        offset = 1.0 if i % 2 == 0 else 2.65
        out.append(pothole(station, offset, float(dep), float(w), float(l)))
    return out
