"""Dataset I/O and the synthetic pavement generator."""

from .dataset import (
    DatasetManifest,
    FrameEntry,
    GroundTruthDefect,
    read_dataset,
    read_manifest,
    write_dataset,
)
from .synthetic import PavementField, SynthSpec, generate_synthetic, preset

__all__ = [
    "DatasetManifest",
    "FrameEntry",
    "GroundTruthDefect",
    "PavementField",
    "SynthSpec",
    "generate_synthetic",
    "preset",
    "read_dataset",
    "read_manifest",
    "write_dataset",
]
