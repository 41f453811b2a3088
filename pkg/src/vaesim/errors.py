"""Exception types shared across the package."""


class VaesimError(Exception):
    """Base class for every error raised by this package."""


class ParseError(VaesimError):
    """A binary buffer does not parse under the expected grammar."""


class UnsupportedFormat(VaesimError):
    """The container is recognized but uses a type code or dtype we do not handle."""


class MissingArray(VaesimError):
    """A required named array is absent from an archive."""

    def __init__(self, name):
        super().__init__(f"archive is missing required array {name!r}")
        self.name = name


class IoError(VaesimError):
    """A filesystem read or write failed."""


class InvalidArgument(VaesimError):
    """An argument violates a documented precondition."""


class ShapeError(VaesimError):
    """Tensor shapes are inconsistent with the model configuration."""


class NumericError(VaesimError):
    """A non-finite value appeared where finite math is required."""

    def __init__(self, message, checkpoint_path=None):
        if checkpoint_path is not None:
            message = f"{message} (last good checkpoint: {checkpoint_path})"
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class InsufficientBatch(VaesimError):
    """The seeding batch has fewer rows than there are prototypes."""


class FormatError(VaesimError):
    """A checkpoint file is malformed."""


class UnsupportedVersion(VaesimError):
    """A checkpoint declares a version newer than this build understands."""


class ConfigError(VaesimError):
    """A configuration value has the wrong type or is otherwise unusable."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class DegenerateClustering(VaesimError):
    """Every cluster is empty; no cluster-to-label mapping can be built."""
