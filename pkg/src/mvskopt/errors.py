"""Exception types shared across the package."""


class MvskError(Exception):
    """Base class for all package errors."""


class DataError(MvskError, ValueError):
    """Malformed or non-finite input data."""


class DimensionError(MvskError, ValueError):
    """Array shapes do not agree."""


class ResourceLimitError(MvskError):
    """A request would exceed a configured memory guard."""


class SubsolverError(MvskError):
    """A convex subproblem could not be solved.

    Carries the outer iteration at which the failure occurred when raised
    from inside a successive-approximation loop.
    """

    def __init__(self, message, status=None, iteration=None):
        super().__init__(message)
        self.status = status
        self.iteration = iteration
