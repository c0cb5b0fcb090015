"""Exception hierarchy shared across the package.

Two branches matter operationally: :class:`DataError` covers everything a
user can fix by changing inputs (files, configuration, window lengths),
while :class:`NumericError` covers failures of the numerical machinery
itself.  The CLI maps them to distinct exit codes.
"""


class CsgEmosError(Exception):
    """Base class for all package-specific errors."""


class DomainError(CsgEmosError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class DataError(CsgEmosError, ValueError):
    """Invalid or unusable input data or configuration."""


class MissingMemberError(DataError):
    """A forecast case lacks one or more ensemble members."""


class GroupingError(DataError):
    """An exchangeability grouping does not partition the member columns."""


class AlignmentError(DataError):
    """Paired series (scores, forecasts, observations) are not aligned."""


class InsufficientDataError(DataError):
    """Too few training cases or samples for the requested operation."""


class WindowTooLongError(DataError):
    """The rolling training window exceeds the available history."""


class NumericError(CsgEmosError, ArithmeticError):
    """A numerical procedure failed or produced a degenerate quantity."""
