"""Exception types shared across the toolkit."""


class ScriptaError(Exception):
    """Base class for all toolkit-specific errors."""


class DecodeError(ScriptaError):
    """Raised when an image file is malformed or truncated."""


class UnsupportedFormatError(DecodeError):
    """Raised when an image file is valid-looking but not PNG or PNM P5/P6."""


class ManifestError(ScriptaError):
    """Raised when a sample manifest cannot be parsed or is inconsistent."""


class FormatError(ScriptaError):
    """Raised when a binary container (feature store, model file) is invalid."""


class ConfigError(ScriptaError):
    """Raised when artifacts built with incompatible configurations are mixed."""
