"""Exception types shared across the package."""


class PbnnError(Exception):
    """Base class for all library errors."""


class DimensionError(PbnnError):
    """Shapes or scalar backends of operands do not agree."""


class GeometryError(PbnnError):
    """Convolution/pooling geometry does not produce integral output extents."""


class DataError(PbnnError):
    """Dataset ingestion or validation failure."""


class ConfigError(PbnnError):
    """Invalid run configuration."""


class CheckpointError(PbnnError):
    """Checkpoint is unreadable, version-incompatible, or config-mismatched."""


class TrainingDiverged(PbnnError):
    """Training produced a non-finite loss (real backend only)."""

    def __init__(self, epoch: int, batch_index: int, loss: float):
        self.epoch = epoch
        self.batch_index = batch_index
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch_index}"
        )
