"""Exception hierarchy shared across the package.

``InputError`` subclasses signal bad user input (CLI exit code 1);
everything else is an internal contract violation (exit code 2).
"""


class GazeMoeError(Exception):
    pass


class InputError(GazeMoeError):
    """Bad user-supplied input: files, config values, labels."""


class ParseError(InputError):
    pass


class ValidationError(InputError):
    pass


class ConfigError(InputError):
    pass


class FormatError(InputError):
    pass


class MetricUndefinedError(InputError):
    """Requested metric has no defined value on the given data."""


class DimensionError(GazeMoeError):
    """Tensor shapes incompatible with the requested operation."""


class ContractError(GazeMoeError):
    """An internal precondition or invariant was violated."""


class NumericsError(GazeMoeError):
    """Training produced a non-finite loss or gradient."""
