"""SURF keypoint detection and description on integral images.

Box-filter approximations of the Hessian at filter sizes
9, 15, 21, 27 (first octave), with the size increment and the sampling step
doubling in each further octave; 3x3x3 non-maximum suppression; quadratic
interpolation in (x, y, scale); Haar-wavelet orientation and a 64-D
descriptor over a 20s window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence

import numpy as np

from ..errors import ImageTooSmall
from .integral import IntegralImage

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 600.0
DEFAULT_OCTAVES = 3
SCALES_PER_OCTAVE = 4


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    response: float
    laplacian_sign: int
    orientation: float = 0.0


class Described(NamedTuple):
    keypoints: List[Keypoint]
    descriptors: np.ndarray  # (n, 64), unit rows
    dropped: int


def filter_size(octave: int, layer: int) -> int:
    return 3 * ((2 ** (octave + 1)) * (layer + 1) + 1)


def hessian_layer(ii: IntegralImage, size: int, ys: np.ndarray, xs: np.ndarray):
    """Area-normalized (det, trace) of the box Hessian at grid points.

    ``ys``/``xs`` are 1-D row/column coordinates; points whose filter leaves
    the image get NaN.
    """
    l = size // 3
    half = size // 2
    h, w = ii.height, ii.width
    vy = (ys - half >= 0) & (ys + half <= h - 1)
    vx = (xs - half >= 0) & (xs + half <= w - 1)
    if not vy.any() or not vx.any():
        nan = np.full((len(ys), len(xs)), np.nan)
        return nan, nan.copy()
    y = np.clip(ys, half, max(half, h - 1 - half))[:, None]
    x = np.clip(xs, half, max(half, w - 1 - half))[None, :]
    bs = ii.box_sum
    # Dyy: three lobes stacked along y, 2l-1 wide
    x0, x1 = x - (l - 1), x + l
    dyy = bs(y - half, x0, y + half + 1, x1) - 3.0 * bs(y - half + l, x0, y - half + 2 * l, x1)
    y0, y1 = y - (l - 1), y + l
    dxx = bs(y0, x - half, y1, x + half + 1) - 3.0 * bs(y0, x - half + l, y1, x - half + 2 * l)
    dxy = (bs(y - l, x - l, y, x) + bs(y + 1, x + 1, y + l + 1, x + l + 1)
           - bs(y - l, x + 1, y, x + l + 1) - bs(y + 1, x - l, y + l + 1, x))
    inv_area = 1.0 / (size * size)
    dxx, dyy, dxy = dxx * inv_area, dyy * inv_area, dxy * inv_area
    det = dxx * dyy - (0.9 * dxy) ** 2
    mask = vy[:, None] & vx[None, :]
    det = np.where(mask, det, np.nan)
    return det, dxx + dyy


def _refine(stack: np.ndarray, k: np.ndarray, i: np.ndarray, j: np.ndarray):
    """Quadratic interpolation offsets (dx, dy, dlayer) at integer extrema."""
    def at(dk, di, dj):
        return stack[k + dk, i + di, j + dj]

    c = at(0, 0, 0)
    gx = (at(0, 0, 1) - at(0, 0, -1)) / 2
    gy = (at(0, 1, 0) - at(0, -1, 0)) / 2
    gs = (at(1, 0, 0) - at(-1, 0, 0)) / 2
    hxx = at(0, 0, 1) + at(0, 0, -1) - 2 * c
    hyy = at(0, 1, 0) + at(0, -1, 0) - 2 * c
    hss = at(1, 0, 0) + at(-1, 0, 0) - 2 * c
    hxy = (at(0, 1, 1) - at(0, 1, -1) - at(0, -1, 1) + at(0, -1, -1)) / 4
    hxs = (at(1, 0, 1) - at(1, 0, -1) - at(-1, 0, 1) + at(-1, 0, -1)) / 4
    hys = (at(1, 1, 0) - at(1, -1, 0) - at(-1, 1, 0) + at(-1, -1, 0)) / 4
    H = np.stack([np.stack([hxx, hxy, hxs], -1),
                  np.stack([hxy, hyy, hys], -1),
                  np.stack([hxs, hys, hss], -1)], -2)
    g = np.stack([gx, gy, gs], -1)
    ok = np.abs(np.linalg.det(H)) > 1e-12
    off = np.full(g.shape, np.inf)
    if ok.any():
        off[ok] = -np.linalg.solve(H[ok], g[ok][..., None])[..., 0]
    return off


def detect_surf(ii: IntegralImage, hessian_threshold: float = DEFAULT_THRESHOLD,
                octaves: int = DEFAULT_OCTAVES) -> List[Keypoint]:
    """Scale-space Hessian extrema, strongest first."""
    need = 16 * 2 ** (octaves - 1)
    if ii.width < need or ii.height < need:
        raise ImageTooSmall(f"{octaves} octaves need at least {need}x{need}, got {ii.width}x{ii.height}")
    found = []
    for o in range(octaves):
        step = 2 ** o
        ys = np.arange(0, ii.height, step)
        xs = np.arange(0, ii.width, step)
        sizes = [filter_size(o, k) for k in range(SCALES_PER_OCTAVE)]
        layers = [hessian_layer(ii, L, ys, xs) for L in sizes]
        dets = np.stack([d for d, _ in layers])
        traces = np.stack([t for _, t in layers])
        nk, ny, nx = dets.shape
        if ny < 3 or nx < 3:
            continue
        core = dets[1:nk - 1, 1:ny - 1, 1:nx - 1]
        with np.errstate(invalid="ignore"):
            is_max = core > hessian_threshold
            for dk in (-1, 0, 1):
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        if dk == di == dj == 0:
                            continue
                        nb = dets[1 + dk:nk - 1 + dk, 1 + di:ny - 1 + di, 1 + dj:nx - 1 + dj]
                        # NaN neighbours compare False, so border extrema drop out
                        is_max &= core > nb
        kk, ii_, jj = np.nonzero(is_max)
        if len(kk) == 0:
            continue
        kk, ii_, jj = kk + 1, ii_ + 1, jj + 1
        off = _refine(dets, kk, ii_, jj)
        good = np.all(np.abs(off) <= 0.5, axis=1)
        inc = sizes[1] - sizes[0]
        for n in np.nonzero(good)[0]:
            k, i, j = kk[n], ii_[n], jj[n]
            x = (j + off[n, 0]) * step
            y = (i + off[n, 1]) * step
            if not (0 <= x <= ii.width - 1 and 0 <= y <= ii.height - 1):
                continue
            size = sizes[k] + off[n, 2] * inc
            found.append(Keypoint(
                x=float(x), y=float(y), scale=float(1.2 * size / 9.0),
                response=float(dets[k, i, j]),
                laplacian_sign=1 if traces[k, i, j] >= 0 else -1,
            ))
    found.sort(key=lambda p: (-p.response, p.y, p.x, p.scale))
    return found


def _haar(ii: IntegralImage, cx: np.ndarray, cy: np.ndarray, half: np.ndarray):
    """Haar x/y responses of side 2*half centred at integer pixels."""
    bs = ii.box_sum
    dx = bs(cy - half, cx, cy + half, cx + half) - bs(cy - half, cx - half, cy + half, cx)
    dy = bs(cy, cx - half, cy + half, cx + half) - bs(cy - half, cx - half, cy, cx + half)
    return dx, dy


def _inside(ii: IntegralImage, cx, cy, half):
    return (cx - half >= 0) & (cx + half <= ii.width) & (cy - half >= 0) & (cy + half <= ii.height)


def _rint(a):
    return np.floor(a + 0.5).astype(np.int64)


_ORI_I, _ORI_J = np.mgrid[-6:7, -6:7]
_ORI_SEL = (_ORI_I ** 2 + _ORI_J ** 2) < 36
_ORI_I, _ORI_J = _ORI_I[_ORI_SEL].astype(float), _ORI_J[_ORI_SEL].astype(float)
_ORI_W = np.exp(-(_ORI_I ** 2 + _ORI_J ** 2) / (2 * 2.0 ** 2))


def orientation(ii: IntegralImage, kp: Keypoint) -> float:
    """Dominant direction of Haar responses within radius 6s (pi/3 window)."""
    s = kp.scale
    cx = _rint(kp.x + _ORI_I * s)
    cy = _rint(kp.y + _ORI_J * s)
    half = np.full(cx.shape, max(1, int(round(2 * s))))
    cx = np.clip(cx, half, ii.width - half)
    cy = np.clip(cy, half, ii.height - half)
    dx, dy = _haar(ii, cx, cy, half)
    dx, dy = dx * _ORI_W, dy * _ORI_W
    ang = np.arctan2(dy, dx)
    diff = np.mod(ang[None, :] - ang[:, None], 2 * np.pi)
    inwin = diff < np.pi / 3
    sx = inwin @ dx
    sy = inwin @ dy
    best = int(np.argmax(sx * sx + sy * sy))
    return float(np.arctan2(sy[best], sx[best]))


_DU = (np.arange(20) - 9.5)
_DESC_U, _DESC_V = np.meshgrid(_DU, _DU)  # _DESC_U varies along columns
_DESC_U, _DESC_V = _DESC_U.ravel(), _DESC_V.ravel()
_DESC_W = np.exp(-(_DESC_U ** 2 + _DESC_V ** 2) / (2 * 3.3 ** 2))
_DESC_BIN = (np.floor((_DESC_V + 10) / 5) * 4 + np.floor((_DESC_U + 10) / 5)).astype(int)


def describe_surf(ii: IntegralImage, kps: Sequence[Keypoint], upright: bool = True) -> Described:
    """64-D descriptors; keypoints whose window leaves the image are dropped."""
    kps = list(kps)
    if not kps:
        return Described([], np.zeros((0, 64)), 0)
    if not upright:
        kps = [Keypoint(k.x, k.y, k.scale, k.response, k.laplacian_sign, orientation(ii, k))
               for k in kps]
    x = np.array([k.x for k in kps])[:, None]
    y = np.array([k.y for k in kps])[:, None]
    s = np.array([k.scale for k in kps])[:, None]
    th = np.array([k.orientation for k in kps])[:, None]
    c, sn = np.cos(th), np.sin(th)
    px = x + s * (_DESC_U * c - _DESC_V * sn)
    py = y + s * (_DESC_U * sn + _DESC_V * c)
    cx, cy = _rint(px), _rint(py)
    half = np.maximum(1, _rint(s)) * np.ones_like(cx)
    fits = np.all(_inside(ii, cx, cy, half), axis=1)
    cxs = np.where(fits[:, None], cx, half)
    cys = np.where(fits[:, None], cy, half)
    dx, dy = _haar(ii, cxs, cys, half)
    rx = (dx * c + dy * sn) * _DESC_W
    ry = (-dx * sn + dy * c) * _DESC_W
    n = len(kps)
    desc = np.zeros((n, 16, 4))
    for b in range(16):
        sel = _DESC_BIN == b
        desc[:, b, 0] = rx[:, sel].sum(axis=1)
        desc[:, b, 1] = np.abs(rx[:, sel]).sum(axis=1)
        desc[:, b, 2] = ry[:, sel].sum(axis=1)
        desc[:, b, 3] = np.abs(ry[:, sel]).sum(axis=1)
    desc = desc.reshape(n, 64)
    norm = np.linalg.norm(desc, axis=1)
    keep = fits & (norm > 1e-12)
    desc = desc[keep] / norm[keep, None]
    kept = [k for k, f in zip(kps, keep) if f]
    dropped = n - len(kept)
    if dropped:
        log.debug("dropped %d keypoints at the image border", dropped)
    return Described(kept, desc, dropped)
