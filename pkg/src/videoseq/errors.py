"""Exception types shared across the library.

Each class maps to one failure category so callers can distinguish bad
shapes from bad files from bad training state without string matching.
"""


class VideoseqError(Exception):
    """Base class for all library errors."""


class DimensionError(VideoseqError, ValueError):
    """Array shapes do not satisfy an operation's contract."""


class ConfigurationError(VideoseqError, ValueError):
    """A configuration value is out of its legal range."""


class PreconditionError(VideoseqError, ValueError):
    """A documented precondition does not hold for the given inputs."""


class StateError(VideoseqError, RuntimeError):
    """An object is in the wrong state for the requested operation."""


class ContractError(VideoseqError, ValueError):
    """A call violates an interface contract (e.g. non-scalar loss)."""


class FormatError(VideoseqError, ValueError):
    """A file does not match its declared binary or text format."""


class CorruptionError(VideoseqError, ValueError):
    """A file matches its format header but ends or breaks mid-stream."""


class ValidationError(VideoseqError, ValueError):
    """A record violates bounds declared by its container."""


class InputError(VideoseqError, ValueError):
    """Inputs that are individually valid do not fit together."""


class TrainingError(VideoseqError, RuntimeError):
    """Optimization cannot proceed (e.g. non-finite gradients)."""
