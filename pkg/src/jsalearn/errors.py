"""Exception taxonomy shared across the package."""


class JsaError(Exception):
    """Base class for all package errors."""


class ShapeError(JsaError, ValueError):
    """Array shape does not match what an operation requires."""


class DomainError(JsaError, ValueError):
    """Values outside the legal domain (e.g. latents that are not binary/one-hot)."""


class NumericError(JsaError, ArithmeticError):
    """Non-finite values or diverging iterates."""


class StateError(JsaError, RuntimeError):
    """An object was used in a way its current state does not allow."""


class CapabilityError(JsaError, RuntimeError):
    """Requested computation exceeds a hard resource bound (e.g. enumeration cap)."""


class FormatError(JsaError, ValueError):
    """A file does not conform to its declared on-disk format."""


class ConfigError(JsaError, ValueError):
    """Invalid or inconsistent run configuration."""


class ArchParseError(JsaError, ValueError):
    """Malformed architecture string. Carries the character position of the fault."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class TrainingDiverged(NumericError):
    """Training aborted on numeric divergence; carries the last good state."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result
