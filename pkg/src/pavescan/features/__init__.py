"""Integral images, SURF keypoints/descriptors and descriptor matching."""

from .integral import IntegralImage, integral_image
from .matching import Match, match_descriptors
from .surf import Described, Keypoint, describe_surf, detect_surf

__all__ = [
    "Described",
    "IntegralImage",
    "Keypoint",
    "Match",
    "describe_surf",
    "detect_surf",
    "integral_image",
    "match_descriptors",
]
