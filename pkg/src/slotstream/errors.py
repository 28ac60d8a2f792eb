"""Exception taxonomy shared by the whole package."""


class SlotStreamError(Exception):
    """Base class for all errors raised by slotstream."""


class ShapeError(SlotStreamError):
    """Operand dimensions are incompatible."""


class ParameterError(SlotStreamError):
    """A configuration value or argument violates its contract."""


class NumericError(SlotStreamError):
    """A numeric precondition was violated (non-finite or non-positive data)."""


class EmptySetError(SlotStreamError):
    """An encoding was requested for a set with no elements."""


class ConfigError(SlotStreamError):
    """An encoder stack or model configuration is inconsistent."""


class ParseError(SlotStreamError):
    """A model, session, or batch file could not be parsed."""


class DataError(SlotStreamError):
    """Input data does not match the model (wrong width, bad values)."""


class SessionError(SlotStreamError):
    """A session file is unusable: fingerprint mismatch, lock conflict, corruption."""


class TrainingError(SlotStreamError):
    """Training diverged or was configured inconsistently."""
