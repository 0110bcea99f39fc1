"""Homography estimation: normalized DLT and MSAC robust fitting."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .core import _readonly
from .errors import (
    DegenerateConfiguration,
    InvariantError,
    NoValidModel,
    PointAtInfinity,
    TooFewPairs,
)

COLLINEAR_AREA = 1e-9
CONDITION_MIN = 1e-10
# Residuals below this are rounding noise of an exact fit and count as zero.
RESIDUAL_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective map, canonicalized to h33 = 1 (unit Frobenius norm if h33 ~ 0)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(m)) or not np.any(m):
            raise InvariantError("homography must be finite and nonzero")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        else:
            m = m / np.linalg.norm(m)
        if not abs(np.linalg.det(m)) > 1e-12:
            raise InvariantError("homography is singular")
        object.__setattr__(self, "matrix", _readonly(m))

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0, tx], [0, 1.0, ty], [0, 0, 1.0]]))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)

    def apply(self, pts) -> np.ndarray:
        return apply_homography(self, pts)


def apply_homography(h: Homography, p) -> np.ndarray:
    """Map point(s) of shape (2,) or (n, 2)."""
    p = np.asarray(p, dtype=float)
    m = h.matrix if isinstance(h, Homography) else np.asarray(h, dtype=float)
    x = m[0, 0] * p[..., 0] + m[0, 1] * p[..., 1] + m[0, 2]
    y = m[1, 0] * p[..., 0] + m[1, 1] * p[..., 1] + m[1, 2]
    w = m[2, 0] * p[..., 0] + m[2, 1] * p[..., 1] + m[2, 2]
    if np.any(np.abs(w) < 1e-12):
        raise PointAtInfinity("point maps to infinity")
    return np.stack([x / w, y / w], axis=-1)


def _normalizer(pts: np.ndarray) -> np.ndarray:
    """Similarity taking the centroid to 0 and mean distance to sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d == 0:
        raise DegenerateConfiguration("all points coincide")
    s = math.sqrt(2.0) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _tri_area(a, b, c) -> float:
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def has_collinear_triple(pts: np.ndarray, tol: float = COLLINEAR_AREA) -> bool:
    return any(_tri_area(*pts[list(t)]) < tol for t in itertools.combinations(range(len(pts)), 3))


def _all_collinear(pts: np.ndarray) -> bool:
    c = pts - pts.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    return s[0] == 0 or s[1] < 1e-9 * s[0]


def _transform(t: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return pts @ t[:2, :2].T + t[:2, 2]


def estimate_homography_dlt(src, dst) -> Homography:
    """Least-squares (algebraic) homography with Hartley normalization."""
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    n = len(src)
    if n < 4 or len(dst) != n:
        raise TooFewPairs(f"need at least 4 point pairs, got {n}")
    t1, t2 = _normalizer(src), _normalizer(dst)
    a, b = _transform(t1, src), _transform(t2, dst)
    if n == 4:
        if has_collinear_triple(a) or has_collinear_triple(b):
            raise DegenerateConfiguration("three of the four points are collinear")
    elif _all_collinear(a) or _all_collinear(b):
        raise DegenerateConfiguration("points are collinear")
    A = np.zeros((2 * n, 9))
    x, y, u, v = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    A[0::2, 0:3] = np.stack([-x, -y, -np.ones(n)], 1)
    A[0::2, 6:9] = np.stack([u * x, u * y, u], 1)
    A[1::2, 3:6] = np.stack([-x, -y, -np.ones(n)], 1)
    A[1::2, 6:9] = np.stack([v * x, v * y, v], 1)
    _, s, vt = np.linalg.svd(A)
    if s[0] == 0 or s[7] / s[0] < CONDITION_MIN:
        raise DegenerateConfiguration("DLT system is ill-conditioned")
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(t2) @ hn @ t1
    try:
        return Homography(m)
    except InvariantError:
        raise DegenerateConfiguration("estimated homography is singular") from None


def estimate_similarity(src, dst) -> Homography:
    """Least-squares 4-DOF similarity (Umeyama without reflection)."""
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    n = len(src)
    if n < 2 or len(dst) != n:
        raise TooFewPairs(f"need at least 2 point pairs, got {n}")
    ms, md = src.mean(0), dst.mean(0)
    a, b = src - ms, dst - md
    var = (a ** 2).sum() / n
    if var < 1e-18:
        raise DegenerateConfiguration("source points coincide")
    cov = b.T @ a / n
    u, d, vt = np.linalg.svd(cov)
    sgn = np.diag([1.0, np.sign(np.linalg.det(u @ vt)) or 1.0])
    r = u @ sgn @ vt
    scale = np.trace(np.diag(d) @ sgn) / var
    if scale <= 0:
        raise DegenerateConfiguration("degenerate similarity")
    m = np.eye(3)
    m[:2, :2] = scale * r
    m[:2, 2] = md - scale * r @ ms
    return Homography(m)


@dataclass(frozen=True)
class MsacConfig:
    threshold: float = 1.5
    max_iterations: int = 2000
    confidence: float = 0.99
    seed: int = 0
    model: str = "projective"  # or "similarity"
    symmetric: bool = False

    def __post_init__(self):
        if not self.threshold > 0:
            raise InvariantError("threshold must be positive")
        if not 0 < self.confidence < 1:
            raise InvariantError("confidence must lie in (0, 1)")
        if self.max_iterations < 1:
            raise InvariantError("max_iterations must be >= 1")
        if self.model not in ("projective", "similarity"):
            raise InvariantError(f"unknown model family {self.model!r}")

    @property
    def sample_size(self) -> int:
        return 4 if self.model == "projective" else 2


@dataclass(frozen=True, eq=False)
class EstimateResult:
    model: Homography
    inlier_indices: np.ndarray
    score: float
    iterations_run: int
    # best score after each improvement, in acceptance order
    score_history: Tuple[float, ...] = field(default=())

    @property
    def inlier_count(self) -> int:
        return len(self.inlier_indices)


def residuals(h: Homography, src: np.ndarray, dst: np.ndarray, symmetric: bool = False) -> np.ndarray:
    """Forward reprojection distance, or RMS of both transfer directions."""
    m = h.matrix
    with np.errstate(divide="ignore", invalid="ignore"):
        w = src @ m[2, :2] + m[2, 2]
        fx = (src @ m[0, :2] + m[0, 2]) / w
        fy = (src @ m[1, :2] + m[1, 2]) / w
        r2 = (fx - dst[:, 0]) ** 2 + (fy - dst[:, 1]) ** 2
        if symmetric:
            mi = np.linalg.inv(m)
            w = dst @ mi[2, :2] + mi[2, 2]
            bx = (dst @ mi[0, :2] + mi[0, 2]) / w
            by = (dst @ mi[1, :2] + mi[1, 2]) / w
            r2 = 0.5 * (r2 + (bx - src[:, 0]) ** 2 + (by - src[:, 1]) ** 2)
    r = np.sqrt(r2)
    r[r < RESIDUAL_FLOOR] = 0.0
    return np.where(np.isfinite(r), r, np.inf)


def msac_score(r: np.ndarray, threshold: float) -> float:
    return float(np.minimum(r * r, threshold * threshold).sum())


def _sample_degenerate(src4: np.ndarray, dst4: np.ndarray) -> bool:
    if len(src4) == 2:
        return np.linalg.norm(src4[0] - src4[1]) < 1e-9 or np.linalg.norm(dst4[0] - dst4[1]) < 1e-9
    return has_collinear_triple(src4) or has_collinear_triple(dst4)


def required_iterations(inlier_fraction: float, confidence: float, sample_size: int) -> float:
    w = inlier_fraction ** sample_size
    if w >= 1.0:
        return 0.0
    if w <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - w)


def msac_homography(src, dst, cfg: MsacConfig = MsacConfig()) -> EstimateResult:
    """Robust homography from putative correspondences ``src[i] -> dst[i]``."""
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    n = len(src)
    k = cfg.sample_size
    if n < k or len(dst) != n:
        raise TooFewPairs(f"need at least {k} point pairs, got {n}")
    fit = estimate_homography_dlt if cfg.model == "projective" else estimate_similarity
    rng = np.random.default_rng(cfg.seed)
    t2 = cfg.threshold ** 2
    best = None
    best_score = math.inf
    history: List[float] = []
    bound = float(cfg.max_iterations)
    it = 0
    while it < min(bound, cfg.max_iterations):
        it += 1
        idx = rng.choice(n, size=k, replace=False)
        s, d = src[idx], dst[idx]
        if _sample_degenerate(s, d):
            continue
        try:
            h = fit(s, d)
        except (DegenerateConfiguration, InvariantError):
            continue
        r = residuals(h, src, dst, cfg.symmetric)
        score = msac_score(r, cfg.threshold)
        if score < best_score:
            best, best_score = h, score
            history.append(score)
            w = np.count_nonzero(r < cfg.threshold) / n
            bound = required_iterations(w, cfg.confidence, k)
    if best is None:
        raise NoValidModel(f"all {it} samples were degenerate")

    r = residuals(best, src, dst, cfg.symmetric)
    inl = np.nonzero(r < cfg.threshold)[0]
    model = best
    if len(inl) >= k:
        try:
            refit = fit(src[inl], dst[inl])
        except (DegenerateConfiguration, InvariantError):
            refit = None
        if refit is not None:
            r_old = np.sqrt(np.mean(r[inl] ** 2))
            r_new_inl = residuals(refit, src[inl], dst[inl], cfg.symmetric)
            # An algebraic refit can in rare cases be geometrically worse; keep the sample model then.
            if np.sqrt(np.mean(r_new_inl ** 2)) <= r_old:
                model = refit
    r = residuals(model, src, dst, cfg.symmetric)
    inl = np.nonzero(r < cfg.threshold)[0]
    return EstimateResult(model, inl, msac_score(r, cfg.threshold), it, tuple(history))
