from typing import Any, Dict, Optional


class BlobTalkError(Exception):
    """Base class for every failure raised by the generation stack."""


class DimensionError(BlobTalkError, ValueError):
    """A tensor shape does not satisfy an operation's contract."""


class ConfigurationError(BlobTalkError, ValueError):
    """Invalid configuration value or combination of values."""


class NumericFailure(BlobTalkError, ArithmeticError):
    """
    Non-finite values showed up in a computation.

    Args:
        message: what went wrong
        diagnostics: free-form dump (timesteps, norms, op name) kept for the log
    """

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in sorted(self.diagnostics.items()))
        return f"{base} ({details})"


class StepOrderError(BlobTalkError, ValueError):
    """A sampler step was asked to move forward in diffusion time."""


class UndefinedCorrelationError(BlobTalkError, ValueError):
    """Pearson correlation requested on a constant sequence."""


class EmptyRegionError(BlobTalkError, ValueError):
    """A measurement region contains no support (e.g. an all-black frame)."""


class CheckpointError(BlobTalkError):
    """Checkpoint or bundle file is malformed or does not match its config."""
