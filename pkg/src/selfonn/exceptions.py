"""Contains exceptions defined by the module."""


class InvalidArgument(ValueError):
    """Exception raised when an operation receives inconsistent shapes, channels or out of range values."""
    pass


class StaleCache(InvalidArgument):
    """Exception raised when a backward pass is given caches from a different forward pass or parameter state."""
    pass


class NetworkNameError(ValueError):
    """Exception raised when an architecture name does not follow the CNN-X or Self-ONN-Q-X convention."""
    pass


class DecodeError(ValueError):
    """Exception raised when a model file or image cannot be decoded."""
    pass


class BadMagic(DecodeError):
    """Exception raised when a stream does not start with a recognized magic number."""
    pass


class TruncatedStream(DecodeError):
    """Exception raised when a stream ends before its header says it should."""
    pass


class UnsupportedVersion(DecodeError):
    """Exception raised when a model file declares a format version this library cannot read."""
    pass


class UnsupportedDepth(DecodeError):
    """Exception raised when an image uses a maxval other than 255."""
    pass


class NumericError(ArithmeticError):
    """Exception raised when a loss or gradient becomes NaN or infinite."""
    pass


class IncompleteGrid(LookupError):
    """Exception raised when a result grid is missing a (method, dataset, sigma) cell."""
    pass


class ConfigError(ValueError):
    """Exception raised when a config file or flag value cannot be resolved."""
    pass
