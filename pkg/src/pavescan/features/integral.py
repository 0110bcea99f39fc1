from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ColorImage, _readonly
from ..errors import EmptyImage


@dataclass(frozen=True, eq=False)
class IntegralImage:
    """(height+1, width+1) running sums with a zero top row and left column."""

    sums: np.ndarray

    @property
    def height(self) -> int:
        return self.sums.shape[0] - 1

    @property
    def width(self) -> int:
        return self.sums.shape[1] - 1

    def box_sum(self, y0, x0, y1, x1):
        """Sum over rows [y0, y1) and columns [x0, x1); arguments may be arrays."""
        s = self.sums
        return s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0]


def to_gray(img) -> np.ndarray:
    if isinstance(img, ColorImage):
        return img.gray()
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        return 0.299 * a[..., 0] + 0.587 * a[..., 1] + 0.114 * a[..., 2]
    return a


def integral_image(img) -> IntegralImage:
    """Integral image of a ColorImage (luma) or a 2-D intensity array."""
    g = to_gray(img)
    if g.ndim != 2 or g.size == 0:
        raise EmptyImage(f"cannot integrate an image of shape {g.shape}")
    out = np.zeros((g.shape[0] + 1, g.shape[1] + 1))
    np.cumsum(np.cumsum(g, axis=0), axis=1, out=out[1:, 1:])
    return IntegralImage(_readonly(out))
