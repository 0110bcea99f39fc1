"""Profiles, straightedge rut depth, defect segmentation and accuracy statistics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .dataio.dataset import GroundTruthDefect
from .errors import (
    DegenerateVariance,
    InvariantError,
    IoFailure,
    NoMatchedPairs,
    ProfileTooSparse,
    StationOutOfRange,
    TooFewPairs,
)
from .stitch import ElevationMosaic

log = logging.getLogger(__name__)

MIN_PROFILE_SAMPLES = 10
MAX_FILL_GAP = 10
DEFAULT_DEPTH_THRESHOLD_MM = 5.0
DEFAULT_MIN_AREA_MM2 = 10_000.0
SLIDING_SPAN_M = 2.0
MATCH_GATE_MM = 500.0
RUT_ASPECT = 3.0
RUT_SPAN_FRACTION = 0.5
GAP_FLOOR_MM = 1e-9


@dataclass(frozen=True, eq=False)
class TransverseProfile:
    station: float  # m
    offsets: np.ndarray  # m, uniform spacing
    elevations: np.ndarray  # mm
    split: bool = False  # True when a long gap forced truncation

    def __post_init__(self):
        o = np.asarray(self.offsets, dtype=float)
        e = np.asarray(self.elevations, dtype=float)
        if o.shape != e.shape or o.ndim != 1:
            raise InvariantError("offsets and elevations must be matching 1-D arrays")
        if len(o) < MIN_PROFILE_SAMPLES:
            raise ProfileTooSparse(f"profile has {len(o)} samples, need {MIN_PROFILE_SAMPLES}")
        if np.any(np.diff(o) <= 0):
            raise InvariantError("profile offsets must be strictly increasing")
        if not np.all(np.isfinite(e)):
            raise InvariantError("profile elevations must be finite")
        o.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "offsets", o)
        object.__setattr__(self, "elevations", e)

    def __len__(self):
        return len(self.offsets)


@dataclass(frozen=True)
class RutMeasurement:
    depth: float  # mm
    offset_at_max: float  # m
    straightedge_span: str  # "full" or "sliding"

    def __post_init__(self):
        if not self.depth >= 0:
            raise InvariantError("rut depth must be non-negative")


@dataclass(frozen=True)
class DefectMeasurement:
    kind: str
    depth: float  # mm
    width: float  # mm, transverse
    length: float  # mm, longitudinal
    centroid: Tuple[float, float]  # (station m, offset m)
    area: float  # mm^2

    def __post_init__(self):
        if min(self.width, self.length, self.area) <= 0 or not self.depth > 0:
            raise InvariantError("defect extents and depth must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "depth_mm": self.depth, "width_mm": self.width,
                "length_mm": self.length, "station_m": self.centroid[0],
                "offset_m": self.centroid[1], "area_mm2": self.area}


@dataclass(frozen=True)
class EvalStats:
    r2: Optional[float] = None
    slope: Optional[float] = None
    intercept: Optional[float] = None  # mm
    mre_depth: Optional[float] = None  # percent
    mre_width: Optional[float] = None
    mre_length: Optional[float] = None

    def __post_init__(self):
        if self.r2 is not None and self.r2 > 1.0 + 1e-12:
            raise InvariantError("r2 cannot exceed 1")
        for v in (self.mre_depth, self.mre_width, self.mre_length):
            if v is not None and v < 0:
                raise InvariantError("relative errors are non-negative")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _fill_short_gaps(v: np.ndarray, max_gap: int) -> np.ndarray:
    """Linearly bridge interior NaN runs of at most ``max_gap`` samples."""
    v = v.copy()
    ok = ~np.isnan(v)
    idx = np.nonzero(ok)[0]
    if len(idx) < 2:
        return v
    for a, b in zip(idx[:-1], idx[1:]):
        gap = b - a - 1
        if 0 < gap <= max_gap:
            t = np.arange(1, gap + 1) / (b - a)
            v[a + 1:b] = v[a] + (v[b] - v[a]) * t
    return v


def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Half-open [start, stop) runs of True."""
    d = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return list(zip(np.nonzero(d == 1)[0], np.nonzero(d == -1)[0]))


def extract_profile(mosaic: ElevationMosaic, station: float) -> TransverseProfile:
    """Transverse profile at ``station`` metres from the first mosaic row."""
    grid = mosaic.along_track()
    n = grid.shape[0]
    row = _round_half_up(station * 1000.0 / mosaic.gsd)
    if station < 0 or row >= n:
        raise StationOutOfRange(
            f"station {station} m outside mosaic extent 0..{(n - 1) * mosaic.gsd / 1000.0:.3f} m")
    raw = grid[row]
    if np.count_nonzero(~np.isnan(raw)) < MIN_PROFILE_SAMPLES:
        raise ProfileTooSparse(f"station {station} m has fewer than {MIN_PROFILE_SAMPLES} data samples")
    filled = _fill_short_gaps(raw, MAX_FILL_GAP)
    runs = _runs(~np.isnan(filled))
    a, b = max(runs, key=lambda r: (r[1] - r[0], -r[0]))
    split = len(runs) > 1
    if split:
        log.warning("profile at station %.3f m has a gap longer than %d samples; "
                    "keeping the longest segment", station, MAX_FILL_GAP)
    if b - a < MIN_PROFILE_SAMPLES:
        raise ProfileTooSparse(f"longest segment at station {station} m has {b - a} samples")
    offsets = np.arange(a, b) * mosaic.gsd / 1000.0
    return TransverseProfile(float(station), offsets, filled[a:b], split)


def upper_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the upper convex hull vertices, left to right (monotone chain)."""
    hull: List[int] = []
    for k in range(len(x)):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            # drop j unless it lies strictly above the chord i -> k
            cross = (x[j] - x[i]) * (y[k] - y[i]) - (y[j] - y[i]) * (x[k] - x[i])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(k)
    return np.asarray(hull, dtype=int)


def chord_value(x, y, i, j, xk):
    """Height at ``xk`` of the straight line through samples i and j."""
    if i == j:
        return y[i]
    return y[i] + (y[j] - y[i]) * (xk - x[i]) / (x[j] - x[i])


def straightedge_gaps(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gap between the taut straightedge (upper hull) and each sample."""
    h = upper_hull(x, y)
    gaps = np.zeros(len(x))
    for i, j in zip(h[:-1], h[1:]):
        for k in range(i + 1, j):
            gaps[k] = chord_value(x, y, i, j, x[k]) - y[k]
    # chords through collinear samples leave rounding residue; count it as contact
    gaps[gaps < GAP_FLOOR_MM] = 0.0
    return gaps


def rut_depth_straightedge(profile: TransverseProfile, mode: str = "full",
                           span_m: float = SLIDING_SPAN_M) -> RutMeasurement:
    """Largest gap under a straightedge laid across the profile.

    ``mode="full"`` spans the whole profile; ``mode="sliding"`` takes the
    maximum over every window of ``span_m`` metres.
    """
    x, y = profile.offsets, profile.elevations
    if mode == "full":
        g = straightedge_gaps(x, y)
        k = int(np.argmax(g))
        return RutMeasurement(float(g[k]), float(x[k]), "full")
    if mode != "sliding":
        raise ValueError(f"unknown straightedge mode {mode!r}")
    best, best_x = 0.0, float(x[0])
    ends = np.searchsorted(x, x + span_m + 1e-12, side="right")
    for s in range(len(x)):
        e = ends[s]
        if e - s < 2:
            break
        g = straightedge_gaps(x[s:e], y[s:e])
        k = int(np.argmax(g))
        if g[k] > best or (g[k] == best and x[s + k] < best_x):
            best, best_x = float(g[k]), float(x[s + k])
        if e == len(x):
            break
    return RutMeasurement(best, best_x, "sliding")


def detect_defects(mosaic: ElevationMosaic, depth_threshold: float = DEFAULT_DEPTH_THRESHOLD_MM,
                   min_area: float = DEFAULT_MIN_AREA_MM2) -> List[DefectMeasurement]:
    """Connected depressions deeper than ``depth_threshold``, largest first.

    Centroids are (station, offset) in metres from mosaic row/column 0.
    """
    if not depth_threshold > 0 or not min_area > 0:
        raise InvariantError("depth_threshold and min_area must be positive")
    grid = mosaic.along_track()
    with np.errstate(invalid="ignore"):
        mask = grid < -depth_threshold
    labels, n = ndimage.label(mask, structure=[[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    g = mosaic.gsd
    run_mm = grid.shape[0] * g
    out = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        comp = labels[sl] == lab
        npx = int(comp.sum())
        area = npx * g * g
        if area < min_area:
            continue
        rows, cols = np.nonzero(comp)
        rows = rows + sl[0].start
        cols = cols + sl[1].start
        length = (rows.max() - rows.min() + 1) * g
        width = (cols.max() - cols.min() + 1) * g
        depth = -float(grid[rows, cols].min())
        kind = "rut" if length / width > RUT_ASPECT and length > RUT_SPAN_FRACTION * run_mm else "pothole"
        centroid = (float(rows.mean() * g / 1000.0), float(cols.mean() * g / 1000.0))
        out.append(DefectMeasurement(kind, depth, float(width), float(length), centroid, float(area)))
    out.sort(key=lambda d: (-d.area, d.centroid))
    return out


class DefectScores(NamedTuple):
    mre_depth: float
    mre_width: float
    mre_length: float
    pairs: List[Tuple[int, int]]  # (truth index, measured index)
    misses: List[int]  # unmatched truth indices
    false_positives: List[int]  # unmatched measured indices


def match_defects(measured: Sequence[DefectMeasurement], truth: Sequence[GroundTruthDefect],
                  gate_mm: float = MATCH_GATE_MM) -> List[Tuple[int, int]]:
    """One-to-one nearest-centroid matching, closest pairs first, within the gate."""
    cand = []
    for t, g in enumerate(truth):
        for m, d in enumerate(measured):
            dist = math.hypot(d.centroid[0] - g.station_m, d.centroid[1] - g.offset_m) * 1000.0
            if dist <= gate_mm:
                cand.append((dist, t, m))
    cand.sort()
    used_t, used_m, pairs = set(), set(), []
    for _, t, m in cand:
        if t in used_t or m in used_m:
            continue
        used_t.add(t)
        used_m.add(m)
        pairs.append((t, m))
    return sorted(pairs)


def defect_mre(measured: Sequence[DefectMeasurement], truth: Sequence[GroundTruthDefect],
               gate_mm: float = MATCH_GATE_MM) -> DefectScores:
    """Per-dimension mean relative error in percent over matched defects.

    Measured centroids must be in the same (station, offset) frame as the truth.
    """
    pairs = match_defects(measured, truth, gate_mm)
    if not pairs:
        raise NoMatchedPairs(f"no measured defect within {gate_mm} mm of any of {len(truth)} truths")
    rel = np.array([[abs(measured[m].depth - truth[t].depth_mm) / truth[t].depth_mm,
                     abs(measured[m].width - truth[t].width_mm) / truth[t].width_mm,
                     abs(measured[m].length - truth[t].length_mm) / truth[t].length_mm]
                    for t, m in pairs])
    mre = rel.mean(axis=0) * 100.0
    misses = sorted(set(range(len(truth))) - {t for t, _ in pairs})
    fps = sorted(set(range(len(measured))) - {m for _, m in pairs})
    return DefectScores(float(mre[0]), float(mre[1]), float(mre[2]), pairs, misses, fps)


def linear_fit_r2(pairs) -> EvalStats:
    """OLS of estimated (first column) on truth (second column)."""
    a = np.asarray(pairs, dtype=float).reshape(-1, 2)
    if len(a) < 3:
        raise TooFewPairs(f"need at least 3 pairs, got {len(a)}")
    est, tru = a[:, 0], a[:, 1]
    xm, ym = tru.mean(), est.mean()
    sxx = np.sum((tru - xm) ** 2)
    if sxx <= 0:
        raise DegenerateVariance("truth values have zero variance")
    slope = np.sum((tru - xm) * (est - ym)) / sxx
    intercept = ym - slope * xm
    ss_res = np.sum((est - (slope * tru + intercept)) ** 2)
    ss_tot = np.sum((est - ym) ** 2)
    r2 = 1.0 if ss_res == 0 else 1.0 - ss_res / ss_tot
    return EvalStats(r2=float(r2), slope=float(slope), intercept=float(intercept))


@dataclass(frozen=True)
class WorldFrame:
    """Maps mosaic pixels to world (station, offset) metres.

    ``position_mm`` is the reference camera's (lateral, longitudinal) ground
    position, ``principal`` its (cx, cy) in raw pixels.
    """

    position_mm: Tuple[float, float]
    principal: Tuple[float, float]
    travel_axis: str = "y"

    def to_world(self, mosaic: ElevationMosaic, station: float, offset: float) -> Tuple[float, float]:
        """(station, offset) in mosaic metres to world metres."""
        g = mosaic.gsd
        along = station * 1000.0 / g
        across = offset * 1000.0 / g
        if self.travel_axis == "y":
            u, v = across + mosaic.origin[0], along + mosaic.origin[1]
            lat = self.position_mm[0] + (u - self.principal[0]) * g
            lon = self.position_mm[1] + (v - self.principal[1]) * g
        else:
            u, v = along + mosaic.origin[0], across + mosaic.origin[1]
            lat = self.position_mm[0] + (v - self.principal[1]) * g
            lon = self.position_mm[1] + (u - self.principal[0]) * g
        return lon / 1000.0, lat / 1000.0

    def from_world(self, mosaic: ElevationMosaic, station: float, offset: float) -> Tuple[float, float]:
        s0, o0 = self.to_world(mosaic, 0.0, 0.0)
        return station - s0, offset - o0

    def defect_to_world(self, mosaic: ElevationMosaic, d: DefectMeasurement) -> DefectMeasurement:
        c = self.to_world(mosaic, *d.centroid)
        return DefectMeasurement(d.kind, d.depth, d.width, d.length, c, d.area)


def profile_csv(profile: TransverseProfile) -> str:
    lines = ["offset_m,elevation_mm"]
    lines += [f"{o:.6f},{e:.6f}" for o, e in zip(profile.offsets, profile.elevations)]
    return "\n".join(lines) + "\n"


def profile_svg(profile: TransverseProfile, rut: Optional[RutMeasurement] = None) -> str:
    """Standalone 800x300 SVG of the profile and its straightedge hull."""
    W, H, pad = 800.0, 300.0, 20.0
    x, y = profile.offsets, profile.elevations
    h = upper_hull(x, y)
    lo, hi = float(y.min()), float(y.max())
    if hi - lo < 1e-9:
        lo, hi = lo - 1.0, hi + 1.0
    x0, x1 = float(x[0]), float(x[-1])

    def px(a):
        return pad + (a - x0) / (x1 - x0) * (W - 2 * pad)

    def py(b):
        return H - pad - (b - lo) / (hi - lo) * (H - 2 * pad)

    prof = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
    hull = " ".join(f"{px(x[k]):.2f},{py(y[k]):.2f}" for k in h)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W:.0f} {H:.0f}" '
        f'width="{W:.0f}" height="{H:.0f}">',
        f'<rect x="0" y="0" width="{W:.0f}" height="{H:.0f}" fill="white"/>',
        f'<polyline points="{prof}" fill="none" stroke="black" stroke-width="1"/>',
        f'<polyline points="{hull}" fill="none" stroke="red" stroke-width="1" stroke-dasharray="4 2"/>',
        f'<text x="{pad:.0f}" y="14" font-size="12" font-family="sans-serif">'
        f'station {profile.station:.3f} m</text>',
    ]
    if rut is not None:
        parts.append(f'<text x="{W - 220:.0f}" y="14" font-size="12" font-family="sans-serif">'
                     f'rut depth {rut.depth:.2f} mm at {rut.offset_at_max:.3f} m</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def stats_dict(stats: EvalStats) -> dict:
    return {k: v for k, v in asdict(stats).items()}
