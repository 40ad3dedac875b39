"""Sequence-to-sequence trajectory prediction with a tree-structured external memory."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericalError, TreememError

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "TreememError",
    "__version__",
]
