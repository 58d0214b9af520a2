"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor extents incompatible with the requested operation."""


class ConfigError(ValueError):
    """Invalid layer or model configuration."""


class InputError(ValueError):
    """Caller-supplied data violates an operation's precondition."""


class TrainingError(RuntimeError):
    """Optimization failure, e.g. non-finite gradients."""


class TPSSolveError(RuntimeError):
    """The thin-plate-spline linear system could not be solved."""


class DataError(RuntimeError):
    """A dataset file is missing or malformed."""


class CheckpointError(RuntimeError):
    """Base class for checkpoint file problems."""


class BadMagic(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class BadVersion(CheckpointError):
    """Checkpoint format version is not supported."""


class BadChecksum(CheckpointError):
    """Checkpoint body does not match its CRC-32 trailer."""
