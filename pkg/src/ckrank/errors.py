"""Exception types shared across the package."""


class CkrankError(Exception):
    """Base class for all package errors."""


class ShapeError(CkrankError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(CkrankError, ValueError):
    """A configuration value violates an invariant (divisibility, sign, ...)."""


class ContractError(CkrankError, ValueError):
    """A call violates an operation's contract (e.g. non-scalar loss)."""


class NonFiniteError(CkrankError, FloatingPointError):
    """An operation produced NaN or Inf values."""


class TrainingDiverged(CkrankError, RuntimeError):
    """Training loss became non-finite; carries diagnostics."""

    def __init__(self, message, batch_index=None, param_norms=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.param_norms = param_norms or {}


class IndexFormatError(CkrankError, ValueError):
    """An impact-index file is malformed or incompatible."""
