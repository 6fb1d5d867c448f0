"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A spec, config file or hyperparameter set is invalid."""


class DomainError(ValueError):
    """An input violates a documented precondition."""


class SimulationDivergedError(RuntimeError):
    """Numerical integration produced non-finite states.

    ``time_index`` is the first output index at which the state became
    non-finite.
    """

    def __init__(self, message: str, time_index: int):
        super().__init__(message)
        self.time_index = time_index


class TrainingError(RuntimeError):
    """An optimization loop failed (NaN loss, divergence)."""


class AnalysisError(RuntimeError):
    """A numerical analysis routine could not produce a result."""


class DatasetIOError(IOError):
    """A dataset container on disk is missing, truncated or inconsistent."""
