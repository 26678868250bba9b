"""Exception types raised across the reconstruction pipeline."""


class CurveDrawError(Exception):
    """Base class for all pipeline errors."""


class DepthTooSmall(CurveDrawError, ValueError):
    """A point lies on or behind a camera's principal plane."""


class DegenerateCameraPair(CurveDrawError, ValueError):
    """Two cameras share a centre, so no epipolar geometry exists."""


class RaysNearParallel(CurveDrawError, ValueError):
    """Back-projected rays are too close to parallel to triangulate."""


class SpacingTooLarge(CurveDrawError, ValueError):
    pass


class UnknownView(CurveDrawError, KeyError):
    pass


class MissingPrimarySupport(CurveDrawError, ValueError):
    """A 3D sample has no edgel link in its curve's primary view."""


class InvalidSpec(CurveDrawError, ValueError):
    pass


class EmptyGroundTruth(CurveDrawError, ValueError):
    pass


class StageError(CurveDrawError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
