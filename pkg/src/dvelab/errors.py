"""Exception types shared across the lab."""


class DvelabError(Exception):
    """Base class for all lab-specific errors."""


class GenerationFailedError(DvelabError):
    """Scene generation never produced a reachable layout; degenerate config."""


class StepAfterDoneError(DvelabError):
    """step() called on a finished episode."""


class DimMismatchError(DvelabError):
    """Tensor/vector dimensions do not match the declared spec."""


class NonFiniteInputError(DvelabError):
    """A network input contained NaN or Inf."""


class NonFiniteGradError(DvelabError):
    """Optimizer received a NaN/Inf gradient."""


class NonFiniteLossError(DvelabError):
    """A training loss became NaN/Inf; the update is aborted."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TapeReusedError(DvelabError):
    """backward() called twice on the same tape."""


class NotSimplexError(DvelabError):
    """Attention weights do not lie on the probability simplex."""


class EmptyTraceError(DvelabError):
    """An attention trace with zero timesteps was supplied."""


class EmptyBatchError(DvelabError):
    """A loss was requested over an empty batch."""


class LengthMismatchError(DvelabError):
    """Sequence lengths disagree (values vs. rewards, etc.)."""


class InsufficientHistoryError(DvelabError):
    """Plateau detection requested with fewer points than the window."""


class NoConvergenceError(DvelabError):
    """Iterative policy evaluation failed to converge."""


class TooFewSamplesError(DvelabError):
    """Mixture fit requested with fewer samples than components."""


class EnumerationBudgetExceededError(DvelabError):
    """Exact trajectory enumeration would exceed the trajectory budget."""


class MissingOracleError(DvelabError):
    """Variance decomposition requires oracle values that were not provided."""


class ZeroLengthError(DvelabError):
    """Navigation efficiency with non-positive mean episode length."""


class ConfigError(DvelabError):
    """Invalid or unreadable configuration."""


class CheckpointError(DvelabError):
    """Corrupt or mismatched checkpoint file."""
