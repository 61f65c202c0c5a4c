"""Exception hierarchy shared across the pipeline stages."""


class LogAdaptError(Exception):
    """Base class for every error raised by this package."""


class IngestionError(LogAdaptError):
    """A raw log file could not be read or decoded."""


class LabelingError(LogAdaptError):
    """Ground-truth labels are missing or inconsistent for a record."""


class SplitError(LogAdaptError):
    """A temporal train/test split cannot be formed as requested."""


class SnapshotError(LogAdaptError):
    """A persisted artifact (miner snapshot, checkpoint) failed to load."""


class EmbeddingBackendError(LogAdaptError):
    """An embedding backend is unavailable or failed to produce a vector."""


class ShapeError(LogAdaptError):
    """An input array has the wrong dimensionality for the model."""


class TrainingError(LogAdaptError):
    """A training run cannot proceed (degenerate pool, bad schedule)."""


class DegenerateEnergyError(LogAdaptError):
    """Both class energies are zero; class probabilities are undefined."""


class ContractError(LogAdaptError):
    """A caller violated an operation precondition."""


class ConfigError(LogAdaptError):
    """Configuration file contains unknown keys or out-of-range values."""


class StageError(LogAdaptError):
    """A pipeline stage is missing an upstream artifact.

    Carries the name of the stage that must run first so the CLI can print
    an actionable message.
    """

    def __init__(self, message: str, missing_stage: str | None = None):
        super().__init__(message)
        self.missing_stage = missing_stage
