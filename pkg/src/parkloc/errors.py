"""Exception types raised by the parkloc pipeline.

Every error the CLI turns into a nonzero exit derives from ParklocError,
so callers can catch one type at the boundary and still tell the
failure classes apart underneath it.
"""


class ParklocError(Exception):
    """Base class for all pipeline errors."""


class DecodeError(ParklocError):
    """An image file could not be decoded."""


class InvalidInputError(ParklocError):
    """An argument violates a documented precondition (shape, range, NaN)."""


class FormatError(ParklocError):
    """A binary artifact (feature file, index) is malformed or unsupported."""


class ParseError(ParklocError):
    """A text artifact (manifest, detection file, config) failed to parse."""


class BuildError(ParklocError):
    """Gallery index construction failed (duplicate ids, missing files)."""


class LoadError(ParklocError):
    """A persisted artifact (index, injected features) is missing or incompatible."""


class EvaluationError(ParklocError):
    """Evaluation inputs are inconsistent (unmatched ids, empty sets)."""
