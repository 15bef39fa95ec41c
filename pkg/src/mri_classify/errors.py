"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: validation problems exit 1, file and
archive problems exit 2, numeric aborts exit 3.
"""


class ShapeError(ValueError):
    """Tensor or layer received data of an incompatible shape."""


class GraphError(ValueError):
    """A backward pass was requested for a value not produced on the tape."""


class UnknownLayerError(ValueError):
    """A layer name does not exist in the model."""


class ArchiveError(OSError):
    """A weight archive is missing entries, malformed, or inconsistent."""


class ChecksumError(ArchiveError):
    """Stored bytes do not match their recorded checksum."""


class ImageFormatError(ValueError):
    """An input image file is not a supported format."""


class CorruptImageError(OSError):
    """An image file exists but cannot be decoded."""


class DatasetLayoutError(OSError):
    """The data root is missing a class directory or a directory is empty."""


class ManifestError(ValueError):
    """A dataset manifest is malformed or violates its invariants."""


class NonFiniteLossError(ArithmeticError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
