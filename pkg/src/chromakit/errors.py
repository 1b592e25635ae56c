"""Exception hierarchy shared by all chromakit modules."""


class ChromakitError(Exception):
    """Base class for all errors raised by this package."""


class ImageIoError(ChromakitError):
    """Raised when an image file cannot be read or written."""


class ComposeError(ChromakitError):
    """Raised when a transform or composite cannot be produced."""


class LabelFormatError(ChromakitError):
    """Raised on malformed label or prediction files."""


class ManifestError(ChromakitError):
    """Raised on malformed dataset manifests."""


class EvaluationError(ChromakitError):
    """Raised when an evaluation run cannot be scored."""


class ConfigError(ChromakitError):
    """Raised on unknown keys or malformed values in configuration."""


class DataError(ChromakitError):
    """Raised when required input files or directories are missing."""
