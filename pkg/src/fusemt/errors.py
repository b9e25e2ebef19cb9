"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class FusemtError(Exception):
    """Base class for all package errors."""


class ShapeError(FusemtError):
    """Operand shapes violate a primitive's contract."""

    def __init__(self, primitive: str, *shapes):
        detail = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{primitive}: incompatible shapes {detail}")
        self.primitive = primitive
        self.shapes = shapes


class NumericError(FusemtError):
    """A forward op produced NaN/Inf, or training diverged."""


class VocabularyMismatchError(FusemtError):
    """Two components require identical vocabularies but got different ones."""


class ConfigError(FusemtError):
    """Bad run configuration: unknown key, missing field, invalid value."""


class DataError(FusemtError):
    """Bad input data: missing file, malformed line, count mismatch."""
