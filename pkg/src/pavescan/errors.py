"""Exception hierarchy.

Every error raised by the library derives from :class:`PavementError`, so the
CLI can turn any processing failure into exit code 1 with a stage name.
"""


class PavementError(Exception):
    """Base class for all library errors."""


class InvariantError(PavementError, ValueError):
    """A value object was constructed with fields violating its invariants."""


# core
class InvalidDepth(PavementError, ValueError):
    pass


class OutOfBounds(PavementError, ValueError):
    pass


class NonPositiveDepth(PavementError, ValueError):
    pass


class ResolutionMismatch(PavementError, ValueError):
    pass


# dataio
class MissingManifest(PavementError, FileNotFoundError):
    pass


class MissingFile(PavementError, FileNotFoundError):
    def __init__(self, path):
        super().__init__(f"missing file: {path}")
        self.path = str(path)


class CorruptImage(PavementError, ValueError):
    pass


class ValidationError(PavementError, ValueError):
    pass


class IoFailure(PavementError, OSError):
    pass


class DefectOutsideLane(PavementError, ValueError):
    pass


# preprocess
class RoiTooSmall(PavementError, ValueError):
    pass


# planefit
class TooFewPoints(PavementError, ValueError):
    pass


class Degenerate(PavementError, ValueError):
    pass


# features
class EmptyImage(PavementError, ValueError):
    pass


class ImageTooSmall(PavementError, ValueError):
    pass


class EmptyDescriptorSet(PavementError, ValueError):
    pass


# registration
class PointAtInfinity(PavementError, ValueError):
    pass


class TooFewPairs(PavementError, ValueError):
    pass


class DegenerateConfiguration(PavementError, ValueError):
    pass


class NoValidModel(PavementError, RuntimeError):
    pass


# stitch
class BrokenChain(PavementError, ValueError):
    pass


class EmptyInput(PavementError, ValueError):
    pass


class GsdNonPositive(PavementError, ValueError):
    pass


class InsufficientOverlap(PavementError, RuntimeError):
    pass


# analyze
class StationOutOfRange(PavementError, ValueError):
    pass


class ProfileTooSparse(PavementError, ValueError):
    pass


class NoMatchedPairs(PavementError, ValueError):
    pass


class DegenerateVariance(PavementError, ValueError):
    pass
