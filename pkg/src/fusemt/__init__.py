"""fusemt: a desk-scale neural machine translation laboratory.

Attentional encoder-decoder translation models plus a family of language
model fusion mechanisms, trained and evaluated end to end on corpora small
enough to iterate on interactively.
"""

from fusemt.backend import BACKEND_NAME
from fusemt.errors import (
    ConfigError,
    DataError,
    FusemtError,
    NumericError,
    ShapeError,
    VocabularyMismatchError,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME",
    "ConfigError",
    "DataError",
    "FusemtError",
    "NumericError",
    "ShapeError",
    "VocabularyMismatchError",
    "__version__",
]
