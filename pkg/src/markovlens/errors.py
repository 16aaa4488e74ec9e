"""Exception types shared across the package."""


class MarkovLensError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MarkovLensError, ValueError):
    """Invalid experiment configuration, identifier, or perturbation spec."""


class ContractViolation(MarkovLensError, ValueError):
    """A caller broke a documented precondition (shapes, ranges, lengths)."""


class TrainingError(MarkovLensError, RuntimeError):
    """Training produced non-finite values; carries diagnostics for the run record."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
