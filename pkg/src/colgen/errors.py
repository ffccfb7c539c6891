"""Exception hierarchy shared by the solver modules."""


class ColgenError(Exception):
    """Base class for all errors raised by :mod:`colgen`."""


class DimensionError(ColgenError, ValueError):
    """Array lengths or tensor shapes do not agree."""


class DomainError(ColgenError, ValueError):
    """Input values outside the mathematical domain (NaN, negative mass, y <= 0)."""


class ParameterError(ColgenError, ValueError):
    """Invalid scalar parameter such as a non-positive bandwidth."""


class DegenerateDualError(ColgenError, ValueError):
    """Dual object has zero total mass and cannot be normalized."""


class UsageError(ColgenError, ValueError):
    """API called with inconsistent arguments (wrong working set, missing baseline...)."""


class ValidationError(ColgenError, ValueError):
    """Instance specification outside the allowed ranges."""


class FormatError(ColgenError, ValueError):
    """Malformed input file; the message names the location of the problem."""
