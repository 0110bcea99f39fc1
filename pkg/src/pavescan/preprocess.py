"""ROI cropping and validity-aware Gaussian smoothing of depth frames."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy import ndimage

from .core import CameraIntrinsics, ColorImage, DepthImage, valid_depth_mask
from .errors import InvariantError, RoiTooSmall

MIN_ROI_SIDE = 16


@dataclass(frozen=True)
class RoiSpec:
    fraction_x: float = 0.8
    fraction_y: float = 0.8

    def __post_init__(self):
        for name in ("fraction_x", "fraction_y"):
            f = getattr(self, name)
            if not 0 < f <= 1:
                raise InvariantError(f"{name} must lie in (0, 1], got {f}")


@dataclass(frozen=True)
class SmoothSpec:
    sigma: float = 1.5
    radius: int = 3

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvariantError(f"sigma must be positive, got {self.sigma}")
        if self.radius < 1 or self.radius < math.ceil(2 * self.sigma):
            raise InvariantError(
                f"radius {self.radius} must be >= 1 and >= ceil(2*sigma) = {math.ceil(2 * self.sigma)}"
            )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def roi_window(width: int, height: int, roi: RoiSpec) -> Tuple[int, int, int, int]:
    """(x0, y0, w, h) of the centred crop."""
    cw = _round_half_up(width * roi.fraction_x)
    ch = _round_half_up(height * roi.fraction_y)
    if cw < MIN_ROI_SIDE or ch < MIN_ROI_SIDE:
        raise RoiTooSmall(f"ROI {cw}x{ch} is below {MIN_ROI_SIDE}x{MIN_ROI_SIDE}")
    return (width - cw) // 2, (height - ch) // 2, cw, ch


Image = Union[DepthImage, ColorImage]


def crop_roi(img: Image, roi: RoiSpec) -> Image:
    x0, y0, cw, ch = roi_window(img.width, img.height, roi)
    data = img.pixels[y0:y0 + ch, x0:x0 + cw]
    origin = (img.origin[0] + x0, img.origin[1] + y0)
    return type(img)(data, origin)


def crop_intrinsics(intr: CameraIntrinsics, roi: RoiSpec) -> CameraIntrinsics:
    x0, y0, cw, ch = roi_window(intr.width, intr.height, roi)
    return intr.cropped(x0, y0, cw, ch)


def gaussian_kernel(spec: SmoothSpec) -> np.ndarray:
    x = np.arange(-spec.radius, spec.radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / spec.sigma) ** 2)
    return k / k.sum()


def gaussian_smooth_depth(depth: DepthImage, spec: SmoothSpec = SmoothSpec()) -> DepthImage:
    """Normalized convolution over valid neighbours only.

    Pixels outside the image count as invalid.  An invalid pixel with at
    least one valid neighbour is filled; output is rounded to whole mm.
    """
    valid = depth.valid
    k = gaussian_kernel(spec)
    num = depth.pixels.astype(np.float64) * valid
    den = valid.astype(np.float64)
    for axis in (0, 1):
        num = ndimage.correlate1d(num, k, axis=axis, mode="constant", cval=0.0)
        den = ndimage.correlate1d(den, k, axis=axis, mode="constant", cval=0.0)
    out = np.zeros(depth.pixels.shape, dtype=np.float64)
    has = den > 0
    out[has] = np.floor(num[has] / den[has] + 0.5)
    out[~valid_depth_mask(out)] = 0
    return DepthImage(out.astype(np.uint16), depth.origin)
