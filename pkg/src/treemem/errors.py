"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific one that applies rather than bare ValueError for
anything a user could trigger from input files or numeric blow-ups.
"""


class TreememError(Exception):
    """Base class for errors raised by this package."""


class DataError(TreememError):
    """Malformed or inconsistent input data (files, records, manifests)."""


class NumericalError(TreememError):
    """Numeric failure: non-finite values, empty softmax, diverged training."""


class ConfigError(TreememError):
    """Invalid configuration value or combination."""
