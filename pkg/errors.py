"""Exceptions raised across the package.

Each class also derives from the builtin a caller would naturally catch, so
``except ValueError`` keeps working for code that does not know this module.
"""


class SubmodError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(SubmodError, ValueError):
    pass


class IndexOutOfRange(SubmodError, IndexError):
    pass


class DuplicateIndexError(SubmodError, ValueError):
    """An index appears twice in a chain, or is queried while already in S."""


class DimensionMismatch(SubmodError, ValueError):
    pass


class NormBoundError(SubmodError, ValueError):
    """A vector or matrix exceeds its declared norm bound. Never clamped."""


class EmptyCandidateSet(SubmodError, LookupError):
    pass


class AbsentIndexError(SubmodError, LookupError):
    """Delete of an index that is not live (already deleted)."""


class ProblemTooLarge(SubmodError, ValueError):
    pass


class IncompatibleRunError(SubmodError, ValueError):
    pass


class AdversaryError(SubmodError, ValueError):
    pass


class InstanceFormatError(SubmodError, ValueError):
    pass
