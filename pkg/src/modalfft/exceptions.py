"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`ModalIDError`, so callers (and the CLI) can map failures to exit
codes without catching unrelated bugs.
"""


class ModalIDError(Exception):
    """Base class for all package errors."""


class ValidationError(ModalIDError, ValueError):
    """Inputs violate a documented invariant (shapes, ranges, units, files)."""


class DomainError(ModalIDError, ValueError):
    """A function was evaluated outside its mathematical domain."""


class BandTooNarrowError(ValidationError):
    """The frequency band selects no (or too few) FFT ordinates."""


class IdentifiabilityError(ModalIDError):
    """The data cannot determine the requested parameters (singular system)."""


class AssemblyError(ModalIDError):
    """Local mode shapes cannot be merged into a global shape."""


class NumericalError(ModalIDError, ArithmeticError):
    """Non-finite numbers or a failed factorisation."""


class NotAMinimumError(NumericalError):
    """The projected Hessian is not positive definite at the returned point."""


class DegenerateFitWarning(UserWarning):
    """The fit is exact (zero residual); the error PSD was floored."""


class CloseModesWarning(UserWarning):
    """The FRF matrix is not clearly rank one at a seed frequency."""
