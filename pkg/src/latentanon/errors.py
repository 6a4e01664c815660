"""Exception types. The CLI maps each category to its own exit code."""


class LatentAnonError(Exception):
    exit_code = 1


class ConfigError(LatentAnonError):
    exit_code = 2


class DataError(LatentAnonError):
    exit_code = 3


class BackendError(LatentAnonError):
    exit_code = 4


class TrainingDiverged(LatentAnonError):
    exit_code = 5


class ShapeError(LatentAnonError, ValueError):
    """Operands disagree in shape or an index falls outside the latent grid."""

    exit_code = 3
