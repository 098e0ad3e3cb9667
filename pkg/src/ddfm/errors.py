"""Exception types shared across the fusion engine."""


class FusionError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(FusionError, ValueError):
    """Operands have incompatible or invalid dimensions."""


class InputRangeError(FusionError, ValueError):
    """Sample values fall outside the range an operation requires."""


class FileFormatError(FusionError, ValueError):
    """An image file is not 8-bit grayscale or RGB PNG."""


class ParameterError(FusionError, ValueError):
    """A numeric parameter violates its documented bounds."""


class NumericError(FusionError, ArithmeticError):
    """A computation produced or received non-finite values."""


class ConfigError(FusionError, ValueError):
    """A run configuration is incomplete or inconsistent."""


class TransportError(FusionError, ConnectionError):
    """The remote score session failed at the socket level."""


class CapabilityError(FusionError, ValueError):
    """A request exceeds what the remote score server advertised."""


class ProtocolError(FusionError, ValueError):
    """A wire message violates the score protocol."""
