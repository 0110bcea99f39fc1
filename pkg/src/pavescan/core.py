"""Camera geometry primitives: pinhole model, depth images, point clouds.

Conventions: camera frame x right, y down, z along the optical axis.  A depth
value is the z coordinate (not the ray length), stored as integer millimetres
with 0 meaning "no return".  Everything derived from depth is float64 mm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import (
    InvalidDepth,
    InvariantError,
    NonPositiveDepth,
    OutOfBounds,
    ResolutionMismatch,
)

DEPTH_MIN_MM = 200
DEPTH_MAX_MM = 8000
ORTHO_TOL = 1e-9


def _readonly(a, dtype=None) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def valid_depth_mask(values) -> np.ndarray:
    values = np.asarray(values)
    return (values >= DEPTH_MIN_MM) & (values <= DEPTH_MAX_MM)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvariantError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InvariantError(f"bad resolution {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvariantError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def cropped(self, x0: int, y0: int, width: int, height: int) -> "CameraIntrinsics":
        """Intrinsics of the window whose top-left pixel is (x0, y0)."""
        return CameraIntrinsics(self.fx, self.fy, self.cx - x0, self.cy - y0, width, height)

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


def _check_rotation(r: np.ndarray):
    if r.shape != (3, 3):
        raise InvariantError(f"rotation must be 3x3, got {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=ORTHO_TOL):
        raise InvariantError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
        raise InvariantError("rotation determinant is not +1")


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """x' = rotation @ x + translation, translation in mm."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _readonly(self.rotation, float)
        t = _readonly(self.translation, float).reshape(3)
        _check_rotation(r)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(np.array(d["rotation"], dtype=float), np.array(d["translation"], dtype=float))


@dataclass(frozen=True, eq=False)
class DepthImage:
    """uint16 depth in mm, shape (height, width); ``origin`` is the crop offset (x, y)."""

    pixels: np.ndarray
    origin: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 2:
            raise InvariantError(f"depth image must be 2-D, got shape {p.shape}")
        if p.dtype != np.uint16:
            if np.issubdtype(p.dtype, np.floating) and np.any(np.isnan(p)):
                raise InvariantError("depth pixels must be finite")
            if p.size and (p.min() < 0 or p.max() > 65535):
                raise InvariantError("depth values must fit in 16 bits")
        object.__setattr__(self, "pixels", _readonly(p, np.uint16))
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return valid_depth_mask(self.pixels)

    def __eq__(self, other):
        return (isinstance(other, DepthImage) and self.origin == other.origin
                and np.array_equal(self.pixels, other.pixels))


@dataclass(frozen=True, eq=False)
class ColorImage:
    """uint8 RGB, shape (height, width, 3)."""

    pixels: np.ndarray
    origin: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3:
            raise InvariantError(f"color image must be (h, w, 3), got {p.shape}")
        object.__setattr__(self, "pixels", _readonly(p, np.uint8))
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def gray(self) -> np.ndarray:
        p = self.pixels.astype(np.float64)
        return 0.299 * p[..., 0] + 0.587 * p[..., 1] + 0.114 * p[..., 2]

    def __eq__(self, other):
        return (isinstance(other, ColorImage) and self.origin == other.origin
                and np.array_equal(self.pixels, other.pixels))


@dataclass(frozen=True, eq=False)
class ElevationImage:
    """Signed height above the fitted pavement plane in mm; NaN = no data."""

    values: np.ndarray
    origin: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvariantError(f"elevation image must be 2-D, got {v.shape}")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.values)


@dataclass(frozen=True, eq=False)
class RGBDFrame:
    index: int
    color: ColorImage
    depth: DepthImage
    timestamp: Optional[float] = None


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.size and not np.all(pts[:, 2] > 0):
            raise InvariantError("point cloud has points with z <= 0")
        object.__setattr__(self, "points", _readonly(pts))
        if self.colors is not None:
            cols = np.asarray(self.colors).reshape(-1, 3)
            if len(cols) != len(pts):
                raise InvariantError(f"{len(cols)} colors for {len(pts)} points")
            object.__setattr__(self, "colors", _readonly(cols, np.uint8))

    def __len__(self):
        return len(self.points)


def unproject(intr: CameraIntrinsics, u, v, d):
    """Pixel (u, v) with depth d (mm) to a camera-frame point.

    Accepts scalars or equally shaped arrays; returns an array of shape
    ``(..., 3)``.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any((u < 0) | (u > intr.width - 1) | (v < 0) | (v > intr.height - 1)):
        raise OutOfBounds(f"pixel outside {intr.width}x{intr.height} image")
    if np.any(~valid_depth_mask(d)):
        raise InvalidDepth(f"depth outside [{DEPTH_MIN_MM}, {DEPTH_MAX_MM}] mm or missing")
    x = (u - intr.cx) * d / intr.fx
    y = (v - intr.cy) * d / intr.fy
    return np.stack(np.broadcast_arrays(x, y, d), axis=-1)


def project(intr: CameraIntrinsics, p) -> np.ndarray:
    """Camera-frame point(s) to subpixel (u, v); results may fall off-image."""
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("point at or behind the camera")
    u = intr.fx * p[..., 0] / z + intr.cx
    v = intr.fy * p[..., 1] / z + intr.cy
    return np.stack([u, v], axis=-1)


def _pixel_grid(height: int, width: int):
    vv, uu = np.mgrid[0:height, 0:width]
    return uu.astype(float), vv.astype(float)


def depth_to_cloud(depth: DepthImage, intr: CameraIntrinsics,
                   color: Optional[ColorImage] = None) -> PointCloud:
    if (depth.width, depth.height) != (intr.width, intr.height):
        raise ResolutionMismatch(
            f"depth {depth.width}x{depth.height} vs intrinsics {intr.width}x{intr.height}"
        )
    mask = depth.valid
    vv, uu = np.nonzero(mask)
    if len(uu) == 0:
        return PointCloud(np.zeros((0, 3)), None if color is None else np.zeros((0, 3)))
    pts = unproject(intr, uu, vv, depth.pixels[vv, uu])
    cols = None if color is None else color.pixels[vv, uu]
    return PointCloud(pts, cols)


def align_depth_to_color(depth: DepthImage, depth_intr: CameraIntrinsics,
                         color_intr: CameraIntrinsics, extr: RigidTransform) -> DepthImage:
    """Forward-warp an IR depth image onto the color camera's pixel grid.

    Each valid pixel goes to the nearest target pixel; on collisions the
    nearest surface wins.
    """
    if (depth.width, depth.height) != (depth_intr.width, depth_intr.height):
        raise ResolutionMismatch("depth image does not match depth intrinsics")
    cloud = depth_to_cloud(depth, depth_intr)
    out = np.full((color_intr.height, color_intr.width), np.inf)
    if len(cloud):
        pts = extr.apply(cloud.points)
        pts = pts[pts[:, 2] > 0]
        uv = project(color_intr, pts)
        col = np.floor(uv[:, 0] + 0.5).astype(np.int64)
        row = np.floor(uv[:, 1] + 0.5).astype(np.int64)
        keep = (col >= 0) & (col < color_intr.width) & (row >= 0) & (row < color_intr.height)
        np.minimum.at(out, (row[keep], col[keep]), pts[keep, 2])
    hit = np.isfinite(out)
    z = np.zeros(out.shape)
    z[hit] = np.floor(out[hit] + 0.5)
    z[~valid_depth_mask(z)] = 0
    return DepthImage(z.astype(np.uint16))
