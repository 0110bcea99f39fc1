"""On-disk dataset layout: ``manifest.json`` plus PGM depth / PPM color frames."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from ..core import CameraIntrinsics, ColorImage, DepthImage, RGBDFrame, RigidTransform
from ..errors import (
    InvariantError,
    IoFailure,
    MissingFile,
    MissingManifest,
    ResolutionMismatch,
    ValidationError,
)
from .netpbm import decode_pgm16, decode_ppm, encode_pgm16, encode_ppm

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1
DEFECT_KINDS = ("rut", "pothole")


@dataclass(frozen=True)
class GroundTruthDefect:
    kind: str
    depth_mm: float
    width_mm: float
    length_mm: float
    station_m: float
    offset_m: float

    def __post_init__(self):
        if self.kind not in DEFECT_KINDS:
            raise InvariantError(f"unknown defect kind {self.kind!r}")
        if min(self.depth_mm, self.width_mm, self.length_mm) <= 0:
            raise InvariantError("defect dimensions must be positive")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "depth_mm": float(self.depth_mm),
            "width_mm": float(self.width_mm),
            "length_mm": float(self.length_mm),
            "station_m": float(self.station_m),
            "offset_m": float(self.offset_m),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthDefect":
        return cls(d["kind"], float(d["depth_mm"]), float(d["width_mm"]),
                   float(d["length_mm"]), float(d["station_m"]), float(d["offset_m"]))


@dataclass(frozen=True)
class FrameEntry:
    index: int
    color: str
    depth: str
    timestamp_ms: Optional[float] = None
    # Camera position on the ground (lateral, longitudinal) in mm, when known.
    position_mm: Optional[Tuple[float, float]] = None

    @classmethod
    def standard(cls, index: int, **kw) -> "FrameEntry":
        return cls(index, f"frames/color_{index:04d}.ppm", f"frames/depth_{index:04d}.pgm", **kw)

    def to_dict(self) -> dict:
        d = {"index": int(self.index), "color": self.color, "depth": self.depth}
        if self.timestamp_ms is not None:
            d["timestamp_ms"] = float(self.timestamp_ms)
        if self.position_mm is not None:
            d["position_mm"] = [float(v) for v in self.position_mm]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FrameEntry":
        pos = d.get("position_mm")
        return cls(int(d["index"]), d["color"], d["depth"], d.get("timestamp_ms"),
                   None if pos is None else (float(pos[0]), float(pos[1])))


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    frames: Tuple[FrameEntry, ...]
    depth_intr: CameraIntrinsics
    color_intr: CameraIntrinsics
    extr: Optional[RigidTransform] = None  # None means frames are pre-registered
    ground_truth: Tuple[GroundTruthDefect, ...] = ()
    travel_axis: str = "y"
    camera_height_mm: Optional[float] = None
    synthetic: Optional[dict] = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))
        if self.travel_axis not in ("x", "y"):
            raise InvariantError(f"travel_axis must be 'x' or 'y', got {self.travel_axis!r}")
        idx = [f.index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValidationError(f"frame indices must be strictly increasing: {idx}")

    @property
    def preregistered(self) -> bool:
        return self.extr is None

    def to_dict(self) -> dict:
        d = {
            "version": FORMAT_VERSION,
            "frames": [f.to_dict() for f in self.frames],
            "depth_intrinsics": self.depth_intr.to_dict(),
            "color_intrinsics": self.color_intr.to_dict(),
            "travel_axis": self.travel_axis,
            "ground_truth": [g.to_dict() for g in self.ground_truth],
        }
        if self.extr is None:
            d["preregistered"] = True
        else:
            d["extrinsic"] = self.extr.to_dict()
        if self.camera_height_mm is not None:
            d["camera_height_mm"] = float(self.camera_height_mm)
        if self.synthetic is not None:
            d["synthetic"] = self.synthetic
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        try:
            if d.get("version") != FORMAT_VERSION:
                raise ValidationError(f"unsupported manifest version {d.get('version')!r}")
            extr = None
            if not d.get("preregistered", False):
                extr = RigidTransform.from_dict(d["extrinsic"])
            return cls(
                frames=[FrameEntry.from_dict(f) for f in d["frames"]],
                depth_intr=CameraIntrinsics.from_dict(d["depth_intrinsics"]),
                color_intr=CameraIntrinsics.from_dict(d["color_intrinsics"]),
                extr=extr,
                ground_truth=[GroundTruthDefect.from_dict(g) for g in d.get("ground_truth", [])],
                travel_axis=d.get("travel_axis", "y"),
                camera_height_mm=d.get("camera_height_mm"),
                synthetic=d.get("synthetic"),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed manifest: {exc!r}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _check_frames(manifest: DatasetManifest, frames: Sequence[RGBDFrame]):
    if len(frames) != len(manifest.frames):
        raise ValidationError(f"manifest lists {len(manifest.frames)} frames, got {len(frames)}")
    di, ci = manifest.depth_intr, manifest.color_intr
    for entry, fr in zip(manifest.frames, frames):
        if entry.index != fr.index:
            raise ValidationError(f"frame index {fr.index} does not match manifest entry {entry.index}")
        if (fr.depth.width, fr.depth.height) != (di.width, di.height):
            raise ResolutionMismatch(
                f"frame {fr.index}: depth {fr.depth.width}x{fr.depth.height}, "
                f"manifest says {di.width}x{di.height}")
        if (fr.color.width, fr.color.height) != (ci.width, ci.height):
            raise ResolutionMismatch(
                f"frame {fr.index}: color {fr.color.width}x{fr.color.height}, "
                f"manifest says {ci.width}x{ci.height}")


def write_dataset(manifest: DatasetManifest, frames: Sequence[RGBDFrame], root) -> None:
    """Write the dataset; validation happens before anything touches disk."""
    try:
        _check_frames(manifest, frames)
    except ResolutionMismatch as exc:
        raise ValidationError(str(exc)) from None
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for entry, fr in zip(manifest.frames, frames):
            for rel, blob in ((entry.depth, encode_pgm16(fr.depth.pixels)),
                              (entry.color, encode_ppm(fr.color.pixels))):
                path = root / rel
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(blob)
        (root / MANIFEST_NAME).write_text(manifest.dumps(), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write dataset at {root}: {exc}") from exc


def read_manifest(root) -> DatasetManifest:
    path = Path(root) / MANIFEST_NAME
    if not path.is_file():
        raise MissingManifest(f"no {MANIFEST_NAME} in {root}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return DatasetManifest.from_dict(data)


def _read_bytes(path: Path) -> bytes:
    if not path.is_file():
        raise MissingFile(path)
    return path.read_bytes()


def read_dataset(root) -> Tuple[DatasetManifest, List[RGBDFrame]]:
    root = Path(root)
    manifest = read_manifest(root)
    frames = []
    for entry in manifest.frames:
        dpath, cpath = root / entry.depth, root / entry.color
        depth = DepthImage(decode_pgm16(_read_bytes(dpath), str(dpath)))
        color = ColorImage(decode_ppm(_read_bytes(cpath), str(cpath)))
        frames.append(RGBDFrame(entry.index, color, depth, entry.timestamp_ms))
    _check_frames(manifest, frames)
    return manifest, frames
