"""Exception types shared across the package."""


class MmbsegError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(MmbsegError):
    """A tensor axis does not match what an operation requires.

    Carries the offending axis name so callers can report it precisely.
    """

    def __init__(self, axis, expected, got, context=""):
        self.axis = axis
        self.expected = expected
        self.got = got
        msg = f"axis '{axis}': expected {expected}, got {got}"
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)


class ConfigError(MmbsegError):
    """An operation or network was configured inconsistently."""


class ContractError(MmbsegError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class UninitializedStatsError(MmbsegError):
    """Eval-mode batch norm was run before any statistics existed."""


class EmptyLossError(MmbsegError):
    """Every pixel in the batch carried the ignore label."""


class TenFormatError(MmbsegError):
    """A .ten file is malformed or truncated."""


class CheckpointError(MmbsegError):
    """A checkpoint archive could not be read."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint was written by an incompatible format version."""


class MissingTensorError(CheckpointError):
    """The checkpoint manifest promises a tensor the archive lacks."""


class TensorShapeError(CheckpointError):
    """A stored tensor's shape disagrees with the manifest's config."""


class GenerationError(MmbsegError):
    """Synthetic dataset generation could not satisfy its constraints."""


class DataError(MmbsegError):
    """Input data (labels, predictions) is out of contract."""


class UndefinedMetricError(MmbsegError):
    """A metric has no defined value (e.g. mIoU with no scored classes)."""


class OptimError(MmbsegError):
    """The optimizer refused a step (e.g. non-finite gradient)."""


class TrainingError(MmbsegError):
    """The training loop aborted (e.g. NaN loss)."""
