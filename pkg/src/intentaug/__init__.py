"""Intent-insertion data augmentation for sequential recommendation."""

from .errors import ConfigError, DataError, IntentAugError, NumericalError, ParseError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "IntentAugError", "NumericalError", "ParseError",
           "__version__"]
