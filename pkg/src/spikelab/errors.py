"""Exception hierarchy shared by every spikelab module."""


class SpikeLabError(Exception):
    """Base class for all errors raised by spikelab."""


class ShapeError(SpikeLabError, ValueError):
    """Tensor shapes do not compose."""


class ParameterError(SpikeLabError, ValueError):
    """A numeric or enumerated argument is outside its valid domain."""


class FormatError(SpikeLabError, ValueError):
    """A file on disk does not follow the expected binary layout."""


class UsageError(SpikeLabError, RuntimeError):
    """An API was called out of order (e.g. backward with a stale tape)."""


class ConfigError(SpikeLabError, ValueError):
    """A configuration key or value is invalid."""
