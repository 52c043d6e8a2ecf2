"""Exception types shared across the pipeline."""


class BehindCamera(ValueError):
    """Point is at or behind the near plane; projection is undefined."""


class OutOfBounds(ValueError):
    """Pixel coordinate falls outside the usable image area."""


class Degenerate(ValueError):
    """Geometric construction has no unique solution (rank-deficient input)."""


class MissingVoxel(KeyError):
    """A voxel key was addressed that was never created in the map."""


class WindowFull(RuntimeError):
    """Appending would exceed the sliding-window capacity."""


class EmptyMask(ValueError):
    """Loss requested over a mask that selects no pixels."""


class MissingCache(RuntimeError):
    """Backward pass invoked on a render output without a retained cache."""


class NoAssociations(RuntimeError):
    """No scan point found a valid plane; the update is skipped."""


class TooFewPixels(RuntimeError):
    """Semi-dense selection produced too few pixels for a visual update."""


class SingularGain(RuntimeError):
    """Kalman gain system is numerically singular; prior is kept."""


class NonMonotonicTime(ValueError):
    """Sensor samples are not strictly increasing in time."""


class DatasetError(ValueError):
    """Dataset directory is missing or malformed."""


class ConfigError(ValueError):
    """Configuration file failed validation."""
