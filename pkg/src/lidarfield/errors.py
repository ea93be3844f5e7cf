"""Exception types shared across the package.

The CLI maps these onto exit codes: input/format/config problems exit 2,
numerical failures during training or evaluation exit 3.
"""


class LidarFieldError(Exception):
    """Base class for all package errors."""


class ScanFormatError(LidarFieldError):
    """Binary scan blob is malformed (bad length or non-finite values)."""


class PoseFormatError(LidarFieldError):
    """Pose file line is malformed or the rotation is not orthonormal."""


class SceneFormatError(LidarFieldError):
    """Synthetic scene description file is malformed."""


class ConfigError(LidarFieldError):
    """Run configuration is missing, inconsistent, or out of range."""


class CheckpointError(LidarFieldError):
    """Checkpoint file is truncated, corrupted, or of the wrong version."""


class MetricError(LidarFieldError):
    """Metric preconditions violated (e.g. empty point cloud)."""


class TrainingError(LidarFieldError):
    """Non-finite loss or gradient encountered during optimization."""
