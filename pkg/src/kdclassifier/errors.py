"""Exception hierarchy shared by every module in the package."""


class KDError(Exception):
    """Base class for all errors raised by kdclassifier."""


class FormatError(KDError, ValueError):
    """Input file does not follow the expected layout."""


class ConsistencyError(KDError, ValueError):
    """Two inputs that must agree (counts, indices, shapes) do not."""


class RangeError(KDError, ValueError):
    """A value lies outside its permitted range."""


class CapacityError(KDError, ValueError):
    """Not enough samples or candidates to satisfy a request."""


class ShapeError(KDError, ValueError):
    """Array dimensions do not match."""


class DegeneracyError(KDError, ArithmeticError):
    """A kernel center yields no usable distortion subspace."""


class UnderflowError(KDError, ArithmeticError):
    """A likelihood row vanished entirely."""


class ModelError(KDError, ValueError):
    """A class model is unusable, e.g. all of its weights are zero."""


class ConfigurationError(KDError, ValueError):
    """A parameter is outside its documented range."""


class KDIOError(KDError, OSError):
    """Reading or writing a file failed."""


class VersionError(KDError, ValueError):
    """A saved model uses an unsupported container version."""


class IntegrityError(KDError, ValueError):
    """A saved model failed validation on load."""
