"""Total-least-squares plane fitting and slope correction (leveling)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CameraIntrinsics,
    DepthImage,
    ElevationImage,
    PointCloud,
    _readonly,
    _check_rotation,
    depth_to_cloud,
    unproject,
)
from .errors import Degenerate, InvariantError, ResolutionMismatch, TooFewPoints

Z_AXIS = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class Plane:
    normal: np.ndarray
    centroid: np.ndarray
    rms_residual: float

    def __post_init__(self):
        n = _readonly(self.normal, float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise InvariantError("plane normal is not unit length")
        if not n[2] > 0:
            raise InvariantError("plane normal must have positive z")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "centroid", _readonly(self.centroid, float).reshape(3))

    def distances(self, points) -> np.ndarray:
        """Signed distance along the normal (positive = farther from the camera)."""
        return (np.asarray(points, dtype=float) - self.centroid) @ self.normal


@dataclass(frozen=True, eq=False)
class LevelingRotation:
    rotation: np.ndarray
    reference_height: float

    def __post_init__(self):
        r = _readonly(self.rotation, float)
        _check_rotation(r)
        object.__setattr__(self, "rotation", r)

    @property
    def angle(self) -> float:
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))


def _as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=float).reshape(-1, 3)


def fit_plane_svd(cloud) -> Plane:
    pts = _as_points(cloud)
    n = len(pts)
    if n < 3:
        raise TooFewPoints(f"need at least 3 points, got {n}")
    centroid = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    if s[0] == 0 or s[1] < 1e-9 * s[0]:
        raise Degenerate("points are coincident or collinear")
    normal = vt[2]
    if normal[2] < 0:
        normal = -normal
    elif normal[2] == 0:
        raise Degenerate("plane contains the optical axis")
    normal = normal / np.linalg.norm(normal)
    return Plane(normal, centroid, float(s[2] / np.sqrt(n)))


def fit_pavement_plane(cloud, trim_fraction: float = 0.0) -> Plane:
    """Plane fit with optional single robust refit.

    With ``trim_fraction > 0`` the deepest points (largest distance beyond
    the first plane, i.e. the lowest elevations) are discarded and the plane
    is fitted once more.
    """
    plane = fit_plane_svd(cloud)
    if trim_fraction <= 0:
        return plane
    pts = _as_points(cloud)
    dist = plane.distances(pts)
    keep = dist <= np.quantile(dist, 1.0 - trim_fraction)
    return fit_plane_svd(pts[keep])


def rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        raise Degenerate("antiparallel vectors have no unique minimal rotation")
    k = axis / s
    theta = np.arctan2(s, c)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    r = np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)
    # Re-orthonormalize to keep the 1e-9 invariant under repeated composition.
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def leveling_rotation(plane: Plane) -> LevelingRotation:
    r = rotation_between(plane.normal, Z_AXIS)
    return LevelingRotation(r, float((r @ plane.centroid)[2]))


def level_points(points, lvl: LevelingRotation) -> np.ndarray:
    """Rotated copy of ``points``; the leveled plane sits at z = reference_height."""
    return np.asarray(points, dtype=float) @ lvl.rotation.T


def level_frame(depth: DepthImage, intr: CameraIntrinsics, lvl: LevelingRotation) -> ElevationImage:
    """Per-pixel elevation above the leveled plane (negative = depression)."""
    if (depth.width, depth.height) != (intr.width, intr.height):
        raise ResolutionMismatch(
            f"depth {depth.width}x{depth.height} vs intrinsics {intr.width}x{intr.height}"
        )
    out = np.full(depth.pixels.shape, np.nan)
    mask = depth.valid
    vv, uu = np.nonzero(mask)
    if len(uu):
        pts = level_points(unproject(intr, uu, vv, depth.pixels[vv, uu]), lvl)
        # The camera looks down, so a deeper point has larger z; flip to "up".
        out[vv, uu] = lvl.reference_height - pts[:, 2]
    return ElevationImage(out, depth.origin)


def fit_and_level(depth: DepthImage, intr: CameraIntrinsics, trim_fraction: float = 0.0):
    """Fit this frame's plane and return (plane, leveling, elevation image)."""
    plane = fit_pavement_plane(depth_to_cloud(depth, intr), trim_fraction)
    lvl = leveling_rotation(plane)
    return plane, lvl, level_frame(depth, intr, lvl)
