"""Exception hierarchy shared by all ordq modules."""


class OrdqError(Exception):
    """Base class for every error raised by ordq."""


class DimensionError(OrdqError, ValueError):
    pass


class ZeroComponent(OrdqError, ValueError):
    pass


class UnsupportedOrder(OrdqError, ValueError):
    pass


class TooFewPairs(OrdqError, ValueError):
    pass


class Empty(OrdqError, ValueError):
    pass


class DegenerateData(OrdqError, ValueError):
    pass


class TooFewPerClass(OrdqError, ValueError):
    pass


class MissingClass(OrdqError, ValueError):
    pass


class DegenerateFeature(OrdqError, ValueError):
    pass


class ZeroPrior(OrdqError, ValueError):
    pass


class UnknownMethod(OrdqError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown method"


class InsufficientData(OrdqError, ValueError):
    pass


class Unsatisfiable(OrdqError, RuntimeError):
    pass


class ConfigError(OrdqError, ValueError):
    """Invalid experiment configuration or command-line arguments."""


class DataError(OrdqError, ValueError):
    """Malformed or inconsistent input data files."""
