"""Exception hierarchy shared across the package."""


class GrainError(Exception):
    """Base class for all library errors."""


class ShapeError(GrainError):
    """Tensor shapes incompatible with the requested operation."""


class ParameterError(GrainError):
    """An argument is outside its valid range."""


class ContractError(GrainError):
    """A caller violated an operation's precondition."""


class InputError(GrainError):
    """Invalid model input, e.g. an out-of-range token id."""


class DataError(GrainError):
    """Malformed dataset file or record."""


class CheckpointError(GrainError):
    """Unreadable or corrupt checkpoint; message carries the byte offset."""


class ConfigError(GrainError):
    """Invalid or inconsistent run configuration."""


class RunError(GrainError):
    """Training run failed, e.g. loss diverged; message carries the step."""
