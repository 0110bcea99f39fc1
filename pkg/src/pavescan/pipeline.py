"""Stage orchestration from RGB-D frames to mosaics, profiles and defect reports."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import analyze
from .core import CameraIntrinsics, ColorImage, ElevationImage, RGBDFrame, align_depth_to_color
from .dataio.dataset import DatasetManifest
from .errors import InsufficientOverlap, InvariantError, PavementError, ProfileTooSparse, StationOutOfRange
from .features import describe_surf, detect_surf, integral_image, match_descriptors
from .planefit import LevelingRotation, Plane, fit_and_level
from .preprocess import RoiSpec, SmoothSpec, crop_intrinsics, crop_roi, gaussian_smooth_depth
from .registration import EstimateResult, MsacConfig, msac_homography
from .stitch import ElevationMosaic, FrameGraph, chain_transforms, mosaic_elevation, mosaic_rgb

log = logging.getLogger(__name__)


def _opt(default, help, **kw):
    return field(default=default, metadata={"help": help, **kw})


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable stage parameter; CLI flags and help text are generated from this."""

    roi_fraction_x: float = _opt(0.8, "fraction of frame width kept by the central crop")
    roi_fraction_y: float = _opt(0.8, "fraction of frame height kept by the central crop")
    smooth_sigma: float = _opt(1.5, "depth smoothing Gaussian sigma (px)")
    smooth_radius: int = _opt(3, "depth smoothing kernel radius (px)")
    plane_trim: float = _opt(0.0, "fraction of deepest points dropped before refitting the plane")
    hessian_threshold: float = _opt(600.0, "SURF Hessian response threshold")
    octaves: int = _opt(3, "SURF octaves")
    upright: bool = _opt(True, "skip SURF orientation assignment")
    ratio_threshold: float = _opt(0.7, "nearest/second-nearest descriptor distance ratio")
    msac_threshold: float = _opt(1.5, "MSAC inlier threshold (px)")
    msac_confidence: float = _opt(0.99, "MSAC stopping confidence")
    msac_max_iterations: int = _opt(2000, "MSAC iteration cap")
    msac_seed: int = _opt(0, "MSAC random seed")
    transform: str = _opt("projective", "pairwise transform family", choices=("projective", "similarity"))
    symmetric_residual: bool = _opt(False, "score with symmetric transfer error")
    min_inliers: int = _opt(8, "fewest inliers accepted for a frame pair")
    composite: str = _opt("mean", "elevation overlap rule", choices=("mean", "median"))
    gsd: Optional[float] = _opt(None, "ground sample distance override (mm/px)")
    depth_threshold: float = _opt(analyze.DEFAULT_DEPTH_THRESHOLD_MM, "defect depth threshold (mm)")
    min_area: float = _opt(analyze.DEFAULT_MIN_AREA_MM2, "smallest defect area kept (mm^2)")
    straightedge: str = _opt("full", "straightedge span", choices=("full", "sliding"))
    stations: int = _opt(5, "number of evenly spaced profile stations")
    threads: int = _opt(1, "worker threads for per-frame stages")

    def __post_init__(self):
        RoiSpec(self.roi_fraction_x, self.roi_fraction_y)
        SmoothSpec(self.smooth_sigma, self.smooth_radius)
        self.msac()
        for f in fields(self):
            ch = f.metadata.get("choices")
            if ch and getattr(self, f.name) not in ch:
                raise InvariantError(f"{f.name} must be one of {ch}")
        if not 0 <= self.plane_trim < 1:
            raise InvariantError("plane_trim must lie in [0, 1)")
        if not self.hessian_threshold > 0 or self.octaves < 1:
            raise InvariantError("hessian_threshold must be positive and octaves >= 1")
        if not 0 < self.ratio_threshold <= 1:
            raise InvariantError("ratio_threshold must lie in (0, 1]")
        if self.gsd is not None and not self.gsd > 0:
            raise InvariantError("gsd override must be positive")
        if not self.depth_threshold > 0 or not self.min_area > 0:
            raise InvariantError("defect thresholds must be positive")
        if self.stations < 1 or self.threads < 1 or self.min_inliers < 1:
            raise InvariantError("stations, threads and min_inliers must be >= 1")

    @property
    def roi(self) -> RoiSpec:
        return RoiSpec(self.roi_fraction_x, self.roi_fraction_y)

    @property
    def smooth(self) -> SmoothSpec:
        return SmoothSpec(self.smooth_sigma, self.smooth_radius)

    def msac(self) -> MsacConfig:
        return MsacConfig(self.msac_threshold, self.msac_max_iterations, self.msac_confidence,
                          self.msac_seed, self.transform, self.symmetric_residual)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class PreparedFrame:
    index: int
    color: ColorImage  # cropped
    elevation: ElevationImage  # cropped, leveled
    intrinsics: CameraIntrinsics  # of the crop
    plane: Plane
    leveling: LevelingRotation


def prepare_frame(frame: RGBDFrame, manifest: DatasetManifest, cfg: PipelineConfig) -> PreparedFrame:
    depth = frame.depth
    if manifest.extr is not None:
        depth = align_depth_to_color(depth, manifest.depth_intr, manifest.color_intr, manifest.extr)
    color = crop_roi(frame.color, cfg.roi)
    depth = gaussian_smooth_depth(crop_roi(depth, cfg.roi), cfg.smooth)
    intr = crop_intrinsics(manifest.color_intr, cfg.roi)
    plane, lvl, elev = fit_and_level(depth, intr, cfg.plane_trim)
    return PreparedFrame(frame.index, color, elev, intr, plane, lvl)


def _map(cfg: PipelineConfig, fn, items):
    if cfg.threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(cfg.threads) as ex:
        return list(ex.map(fn, items))


def prepare_frames(manifest: DatasetManifest, frames: Sequence[RGBDFrame],
                   cfg: PipelineConfig) -> List[PreparedFrame]:
    return _map(cfg, lambda f: prepare_frame(f, manifest, cfg), frames)


def _features(color: ColorImage, cfg: PipelineConfig):
    ii = integral_image(color)
    kps = detect_surf(ii, cfg.hessian_threshold, cfg.octaves)
    return describe_surf(ii, kps, cfg.upright)


def register_pair(prev, cur, cfg: PipelineConfig, label: str = "") -> EstimateResult:
    """MSAC model mapping ``cur`` keypoints into ``prev``."""
    if len(cur.keypoints) == 0 or len(prev.keypoints) == 0:
        raise InsufficientOverlap(f"{label}: a frame has no usable features")
    matches = match_descriptors(cur.descriptors, prev.descriptors, cfg.ratio_threshold)
    need = cfg.msac().sample_size
    if len(matches) < max(need, cfg.min_inliers):
        raise InsufficientOverlap(f"{label}: only {len(matches)} putative matches")
    src = np.array([[cur.keypoints[m.query_index].x, cur.keypoints[m.query_index].y] for m in matches])
    dst = np.array([[prev.keypoints[m.train_index].x, prev.keypoints[m.train_index].y] for m in matches])
    res = msac_homography(src, dst, cfg.msac())
    if res.inlier_count < cfg.min_inliers:
        raise InsufficientOverlap(f"{label}: only {res.inlier_count} inliers of {len(matches)} matches")
    log.info("%s: %d matches, %d inliers", label, len(matches), res.inlier_count)
    return res


def register_sequence(prepared: Sequence[PreparedFrame], cfg: PipelineConfig) -> FrameGraph:
    feats = _map(cfg, lambda p: _features(p.color, cfg), prepared)
    idx = [p.index for p in prepared]
    graph = FrameGraph(idx, {}, idx[0] if idx else 0)
    for k in range(1, len(prepared)):
        graph.pairs[(idx[k - 1], idx[k])] = register_pair(
            feats[k - 1], feats[k], cfg, f"frames {idx[k - 1]}-{idx[k]}")
    return graph


def default_gsd(prepared: Sequence[PreparedFrame], reference: int = 0) -> float:
    """Reference frame's camera-to-plane distance over its focal length."""
    p = prepared[reference]
    return p.leveling.reference_height / p.intrinsics.fx


def default_stations(mosaic: ElevationMosaic, n: int) -> List[float]:
    """Evenly spaced interior stations (m) along the mosaic."""
    length_m = (mosaic.along_track().shape[0] - 1) * mosaic.gsd / 1000.0
    return [round(length_m * (k + 1) / (n + 1), 6) for k in range(n)]


@dataclass
class PipelineResult:
    config: PipelineConfig
    prepared: List[PreparedFrame]
    graph: FrameGraph
    globals: list
    color_mosaic: ColorImage
    mosaic: ElevationMosaic
    profiles: List[analyze.TransverseProfile] = field(default_factory=list)
    ruts: List[analyze.RutMeasurement] = field(default_factory=list)
    defects: List[analyze.DefectMeasurement] = field(default_factory=list)
    world: Optional[analyze.WorldFrame] = None
    scores: Optional[analyze.DefectScores] = None

    @property
    def rut_depth(self) -> Optional[float]:
        if not self.ruts:
            return None
        return float(np.median([r.depth for r in self.ruts]))

    def world_defects(self) -> List[analyze.DefectMeasurement]:
        if self.world is None:
            return list(self.defects)
        return [self.world.defect_to_world(self.mosaic, d) for d in self.defects]


def stitch_frames(manifest: DatasetManifest, frames: Sequence[RGBDFrame], cfg: PipelineConfig):
    """Prepare, register and mosaic; returns a PipelineResult without analysis."""
    prepared = prepare_frames(manifest, frames, cfg)
    graph = register_sequence(prepared, cfg)
    globals_ = chain_transforms(graph)
    gsd = cfg.gsd if cfg.gsd is not None else default_gsd(prepared)
    color = mosaic_rgb([p.color for p in prepared], globals_)
    mosaic = mosaic_elevation([p.elevation for p in prepared], globals_, gsd=gsd,
                              composite=cfg.composite, travel_axis=manifest.travel_axis)
    return PipelineResult(cfg, prepared, graph, globals_, color, mosaic, world=world_frame(manifest, prepared))


def world_frame(manifest: DatasetManifest, prepared=None) -> Optional[analyze.WorldFrame]:
    """Mosaic-to-ground mapping when the reference camera position is known."""
    ref = manifest.frames[0] if manifest.frames else None
    if ref is None or ref.position_mm is None:
        return None
    c = manifest.color_intr
    return analyze.WorldFrame(tuple(ref.position_mm), (c.cx, c.cy), manifest.travel_axis)


def profile_stations(result: PipelineResult, stations: Optional[Sequence[float]] = None):
    cfg = result.config
    stations = list(stations) if stations else default_stations(result.mosaic, cfg.stations)
    profiles, ruts = [], []
    for s in stations:
        try:
            p = analyze.extract_profile(result.mosaic, s)
        except (StationOutOfRange, ProfileTooSparse) as exc:
            log.warning("skipping station %.3f m: %s", s, exc)
            continue
        profiles.append(p)
        ruts.append(analyze.rut_depth_straightedge(p, cfg.straightedge))
    result.profiles, result.ruts = profiles, ruts
    return result


def measure(result: PipelineResult, manifest: Optional[DatasetManifest] = None) -> PipelineResult:
    cfg = result.config
    result.defects = analyze.detect_defects(result.mosaic, cfg.depth_threshold, cfg.min_area)
    if manifest is not None:
        truth = [g for g in manifest.ground_truth if g.kind == "pothole"]
        measured = [d for d in result.world_defects() if d.kind == "pothole"]
        if truth and result.world is not None:
            try:
                result.scores = analyze.defect_mre(measured, truth)
            except PavementError as exc:
                log.warning("defect evaluation skipped: %s", exc)
    return result


def run_pipeline(manifest: DatasetManifest, frames: Sequence[RGBDFrame],
                 cfg: PipelineConfig = PipelineConfig(),
                 stations: Optional[Sequence[float]] = None) -> PipelineResult:
    result = stitch_frames(manifest, frames, cfg)
    profile_stations(result, stations)
    return measure(result, manifest)
