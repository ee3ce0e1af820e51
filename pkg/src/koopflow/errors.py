"""Exception types raised across the package."""


class KoopflowError(Exception):
    """Base class for all package-specific errors."""


class DomainError(KoopflowError, ValueError):
    """A query point lies outside the field's rectangular domain."""


class GridDataError(KoopflowError, ValueError):
    """Gridded velocity data is unusable at the queried location."""


class FormatError(KoopflowError, ValueError):
    """A CSV file does not conform to the expected lattice layout."""


class TrainingDivergedError(KoopflowError, RuntimeError):
    """Optimization produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class GPFitError(KoopflowError, RuntimeError):
    """The Gram matrix could not be factorized even after maximum jitter."""


class BudgetExhaustedError(KoopflowError, RuntimeError):
    """No free candidate location remains for the next sample."""


class ScheduleMismatchError(KoopflowError, ValueError):
    """Trials being aggregated do not share the same sample-count schedule."""


class ConfigError(KoopflowError, ValueError):
    """An experiment configuration file is invalid."""
