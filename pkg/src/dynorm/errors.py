"""Exception hierarchy shared by every dynorm module."""


class DynormError(Exception):
    """Base class for all errors raised by dynorm."""

    exit_code = 3


class DimensionError(DynormError, ValueError):
    """Array lengths or shapes do not line up."""


class ValidationError(DynormError, ValueError):
    """A value is outside its allowed domain (non-finite, negative std, ...)."""


class FormatError(DynormError, ValueError):
    """A model, fixture or config file is malformed."""


class DegenerateBatchError(DynormError, ValueError):
    """Operation needs at least two samples in the batch."""
