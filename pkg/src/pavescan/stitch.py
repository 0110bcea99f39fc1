"""Chaining pairwise homographies and compositing color/elevation mosaics.

Global coordinates are the reference frame's pixel coordinates.  A pairwise
model for the pair (i, i+1) maps pixels of frame i+1 into frame i.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import ColorImage, ElevationImage, PointCloud, _readonly
from .errors import BrokenChain, EmptyInput, GsdNonPositive, InvariantError, IoFailure, CorruptImage
from .registration import EstimateResult, Homography

SNAP = 1e-6
ELEV_MAGIC = b"ELEV"
_ELEV_HEADER = struct.Struct("<4sIIddd1s3x")


@dataclass
class FrameGraph:
    """Pairwise estimates between consecutive frames of a sequence."""

    frame_indices: List[int]
    pairs: Dict[Tuple[int, int], Union[EstimateResult, Homography]] = field(default_factory=dict)
    reference_index: int = 0

    def model(self, a: int, b: int) -> Homography:
        try:
            m = self.pairs[(a, b)]
        except KeyError:
            raise BrokenChain(f"no transform between frames {a} and {b}") from None
        return m.model if isinstance(m, EstimateResult) else m


def chain_transforms(graph: FrameGraph) -> List[Homography]:
    """Per-frame maps into the reference frame, in ``frame_indices`` order."""
    idx = list(graph.frame_indices)
    if not idx:
        raise EmptyInput("no frames")
    if graph.reference_index not in idx:
        raise BrokenChain(f"reference frame {graph.reference_index} is not in the sequence")
    r = idx.index(graph.reference_index)
    out: List[Optional[Homography]] = [None] * len(idx)
    out[r] = Homography.identity()
    for p in range(r + 1, len(idx)):
        out[p] = out[p - 1] @ graph.model(idx[p - 1], idx[p])
    for p in range(r - 1, -1, -1):
        out[p] = out[p + 1] @ graph.model(idx[p], idx[p + 1]).inverse()
    return out


def _snap(a: np.ndarray) -> np.ndarray:
    r = np.rint(a)
    return np.where(np.abs(a - r) < SNAP, r, a)


def _corners(w: int, h: int) -> np.ndarray:
    return np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=float)


def canvas_bounds(shapes: Sequence[Tuple[int, int]], globals_: Sequence[Homography]):
    """(x0, y0, width, height) of the integer canvas covering all warped corners.

    ``shapes`` are (height, width) pairs.
    """
    pts = np.concatenate([_snap(g.apply(_corners(w, h))) for (h, w), g in zip(shapes, globals_)])
    x0, y0 = np.floor(pts.min(axis=0)).astype(int)
    x1, y1 = np.ceil(pts.max(axis=0)).astype(int)
    return int(x0), int(y0), int(x1 - x0 + 1), int(y1 - y0 + 1)


def _source_coords(g: Homography, shape, canvas):
    """Source-pixel coordinates for the canvas patch covered by one frame.

    Returns (rows slice, cols slice, sx, sy, inside mask) or None.
    """
    h, w = shape
    x0, y0, cw, ch = canvas
    c = _snap(g.apply(_corners(w, h)))
    bx0 = max(int(math.floor(c[:, 0].min())) - x0, 0)
    by0 = max(int(math.floor(c[:, 1].min())) - y0, 0)
    bx1 = min(int(math.ceil(c[:, 0].max())) - x0 + 1, cw)
    by1 = min(int(math.ceil(c[:, 1].max())) - y0 + 1, ch)
    if bx1 <= bx0 or by1 <= by0:
        return None
    yy, xx = np.mgrid[by0:by1, bx0:bx1]
    gp = np.stack([xx + x0, yy + y0], axis=-1).astype(float)
    src = _snap(g.inverse().apply(gp.reshape(-1, 2))).reshape(gp.shape)
    sx, sy = src[..., 0], src[..., 1]
    inside = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    return slice(by0, by1), slice(bx0, bx1), sx, sy, inside


def _bilinear_taps(sx, sy, w, h):
    x0 = np.clip(np.floor(sx).astype(int), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(sy).astype(int), 0, max(h - 2, 0))
    fx = np.clip(sx - x0, 0.0, 1.0)
    fy = np.clip(sy - y0, 0.0, 1.0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return [(y0, x0, (1 - fx) * (1 - fy)), (y0, x1, fx * (1 - fy)),
            (y1, x0, (1 - fx) * fy), (y1, x1, fx * fy)]


def warp_color(img: ColorImage, g: Homography, canvas):
    """(values float (H, W, 3), covered mask, feather weight) on the canvas."""
    _, _, cw, ch = canvas
    vals = np.zeros((ch, cw, 3))
    wts = np.zeros((ch, cw))
    cov = np.zeros((ch, cw), dtype=bool)
    got = _source_coords(g, (img.height, img.width), canvas)
    if got is None:
        return vals, cov, wts
    rs, cs, sx, sy, inside = got
    sxi, syi = sx[inside], sy[inside]
    px = img.pixels.astype(np.float64)
    acc = np.zeros((len(sxi), 3))
    for yy, xx, wt in _bilinear_taps(sxi, syi, img.width, img.height):
        acc += wt[:, None] * px[yy, xx]
    patch = np.zeros(sx.shape + (3,))
    patch[inside] = acc
    vals[rs, cs] = patch
    cov[rs, cs] = inside
    edge = np.minimum.reduce([sx, img.width - 1 - sx, sy, img.height - 1 - sy]) + 1.0
    wts[rs, cs] = np.where(inside, edge, 0.0)
    return vals, cov, wts


def mosaic_rgb(frames: Sequence[ColorImage], globals_: Sequence[Homography]) -> ColorImage:
    """Feather-blended color mosaic; ``origin`` is the canvas offset in global pixels."""
    if not frames:
        raise EmptyInput("no frames to mosaic")
    canvas = canvas_bounds([(f.height, f.width) for f in frames], globals_)
    x0, y0, cw, ch = canvas
    num = np.zeros((ch, cw, 3))
    den = np.zeros((ch, cw))
    for f, g in zip(frames, globals_):
        vals, cov, wts = warp_color(f, g, canvas)
        num += vals * wts[..., None]
        den += wts
    out = np.zeros((ch, cw, 3))
    has = den > 0
    out[has] = num[has] / den[has, None]
    return ColorImage(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8), (x0, y0))


@dataclass(frozen=True, eq=False)
class ElevationMosaic:
    elevation: np.ndarray  # float64 mm, NaN = no data
    count: np.ndarray  # contributions per pixel
    gsd: float  # mm per pixel
    origin: Tuple[float, float]  # global pixel of mosaic (0, 0), in raw reference-frame pixels
    travel_axis: str = "y"
    spread: Optional[np.ndarray] = None  # per-pixel std of contributions

    def __post_init__(self):
        e = _readonly(self.elevation, np.float64)
        c = _readonly(self.count, np.int64)
        if e.shape != c.shape:
            raise InvariantError("elevation and count grids differ in shape")
        if not np.array_equal(c == 0, np.isnan(e)):
            raise InvariantError("count must be zero exactly where elevation is no-data")
        if not self.gsd > 0:
            raise GsdNonPositive(f"gsd must be positive, got {self.gsd}")
        if self.travel_axis not in ("x", "y"):
            raise InvariantError(f"bad travel axis {self.travel_axis!r}")
        object.__setattr__(self, "elevation", e)
        object.__setattr__(self, "count", c)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        if self.spread is not None:
            object.__setattr__(self, "spread", _readonly(self.spread, np.float64))

    @property
    def width(self) -> int:
        return self.elevation.shape[1]

    @property
    def height(self) -> int:
        return self.elevation.shape[0]

    def along_track(self) -> np.ndarray:
        """Grid with rows = stations (longitudinal), columns = lateral offsets."""
        return self.elevation if self.travel_axis == "y" else self.elevation.T

    def along_track_count(self) -> np.ndarray:
        return self.count if self.travel_axis == "y" else self.count.T


def warp_elevation(img: ElevationImage, g: Homography, canvas) -> np.ndarray:
    """Elevation warped onto the canvas (NaN where not covered)."""
    _, _, cw, ch = canvas
    out = np.full((ch, cw), np.nan)
    got = _source_coords(g, (img.height, img.width), canvas)
    if got is None:
        return out
    rs, cs, sx, sy, inside = got
    sxi, syi = sx[inside], sy[inside]
    vals = img.values
    num = np.zeros(len(sxi))
    den = np.zeros(len(sxi))
    for yy, xx, wt in _bilinear_taps(sxi, syi, img.width, img.height):
        v = vals[yy, xx]
        ok = ~np.isnan(v) & (wt > 0)
        num[ok] += wt[ok] * v[ok]
        den[ok] += wt[ok]
    res = np.full(len(sxi), np.nan)
    has = den > 0
    res[has] = num[has] / den[has]
    patch = np.full(sx.shape, np.nan)
    patch[inside] = res
    out[rs, cs] = patch
    return out


def mosaic_elevation(images: Sequence[ElevationImage], globals_: Sequence[Homography],
                     gsd: Optional[float] = None, camera_height: Optional[float] = None,
                     fx: Optional[float] = None, composite: str = "mean",
                     reference_index: int = 0, travel_axis: str = "y") -> ElevationMosaic:
    """Warp leveled frames into the reference frame and combine overlaps.

    ``gsd`` defaults to ``camera_height / fx`` (nadir approximation).
    ``reference_index`` is the position of the reference frame in ``images``;
    its crop offset anchors the mosaic origin.
    """
    if not images:
        raise EmptyInput("no elevation frames")
    if gsd is None:
        if camera_height is None or fx is None:
            raise GsdNonPositive("gsd needs either an override or camera_height and fx")
        gsd = camera_height / fx
    if not gsd > 0:
        raise GsdNonPositive(f"gsd must be positive, got {gsd}")
    if composite not in ("mean", "median"):
        raise ValueError(f"unknown composite rule {composite!r}")
    canvas = canvas_bounds([(im.height, im.width) for im in images], globals_)
    x0, y0, cw, ch = canvas
    total = np.zeros((ch, cw))
    sq = np.zeros((ch, cw))
    count = np.zeros((ch, cw), dtype=np.int64)
    layers = []
    for im, g in zip(images, globals_):
        w = warp_elevation(im, g, canvas)
        ok = ~np.isnan(w)
        total[ok] += w[ok]
        sq[ok] += w[ok] ** 2
        count += ok
        if composite == "median":
            layers.append(w)
    elev = np.full((ch, cw), np.nan)
    has = count > 0
    if composite == "mean":
        elev[has] = total[has] / count[has]
    else:
        with np.errstate(all="ignore"):
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                med = np.nanmedian(np.stack(layers), axis=0)
        elev[has] = med[has]
    spread = np.full((ch, cw), np.nan)
    mean = np.where(has, total / np.maximum(count, 1), 0.0)
    spread[has] = np.sqrt(np.maximum(sq[has] / count[has] - mean[has] ** 2, 0.0))
    ref = images[reference_index]
    origin = (x0 + ref.origin[0], y0 + ref.origin[1])
    return ElevationMosaic(elev, count, float(gsd), origin, travel_axis, spread)


def write_elevation(mosaic: ElevationMosaic, path) -> None:
    """Binary grid: header, float32 elevations (NaN = no data), uint32 counts."""
    header = _ELEV_HEADER.pack(ELEV_MAGIC, mosaic.width, mosaic.height, mosaic.gsd,
                               mosaic.origin[0], mosaic.origin[1], mosaic.travel_axis.encode())
    body = mosaic.elevation.astype("<f4").tobytes() + mosaic.count.astype("<u4").tobytes()
    try:
        Path(path).write_bytes(header + body)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_elevation(path) -> ElevationMosaic:
    data = Path(path).read_bytes()
    if len(data) < _ELEV_HEADER.size or data[:4] != ELEV_MAGIC:
        raise CorruptImage(f"{path}: not an ELEV grid")
    magic, w, h, gsd, ox, oy, axis = _ELEV_HEADER.unpack_from(data)
    n = w * h
    expect = _ELEV_HEADER.size + 8 * n
    if len(data) != expect:
        raise CorruptImage(f"{path}: expected {expect} bytes, found {len(data)}")
    off = _ELEV_HEADER.size
    elev = np.frombuffer(data, "<f4", n, off).astype(np.float64).reshape(h, w)
    count = np.frombuffer(data, "<u4", n, off + 4 * n).astype(np.int64).reshape(h, w)
    return ElevationMosaic(elev, count, gsd, (ox, oy), axis.decode())


def mosaic_to_cloud(mosaic: ElevationMosaic, color: Optional[ColorImage] = None):
    """(points, colors) with x = col * gsd, y = row * gsd, z = elevation."""
    rows, cols = np.nonzero(mosaic.count > 0)
    pts = np.stack([cols * mosaic.gsd, rows * mosaic.gsd, mosaic.elevation[rows, cols]], axis=1)
    cols_rgb = None
    if color is not None and color.pixels.shape[:2] == mosaic.elevation.shape:
        cols_rgb = color.pixels[rows, cols]
    return pts, cols_rgb


def export_ply(obj, path, color: Optional[ColorImage] = None) -> None:
    """ASCII PLY of a PointCloud or an ElevationMosaic (millimetres)."""
    if isinstance(obj, ElevationMosaic):
        pts, cols = mosaic_to_cloud(obj, color)
    elif isinstance(obj, PointCloud):
        pts, cols = obj.points, obj.colors
    else:
        raise TypeError(f"cannot export {type(obj).__name__} as PLY")
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property float x", "property float y", "property float z"]
    if cols is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    if cols is None:
        body = [f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in pts]
    else:
        body = [f"{x:.6f} {y:.6f} {z:.6f} {int(r)} {int(g)} {int(b)}"
                for (x, y, z), (r, g, b) in zip(pts, cols)]
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines + body) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
