"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: :class:`InputError` and subclasses
exit with 2, :class:`NumericalError` and subclasses with 3.
"""


class OccuHmmError(Exception):
    """Base class for all package errors."""


class InputError(OccuHmmError):
    """Invalid arguments, malformed data, or a violated precondition."""


class DomainError(InputError):
    """Value outside the mathematical domain of an operation."""


class ExtrapolationError(InputError):
    """Evaluation requested outside the fitted covariate range."""


class NumericalError(OccuHmmError):
    """Numerical failure during an otherwise valid computation."""


class LikelihoodUnderflowError(NumericalError):
    """All state densities vanished at one time step.

    ``t`` is the zero-based global index of the offending observation.
    """

    def __init__(self, message: str, t: int | None = None):
        super().__init__(message)
        self.t = t


class SingularMatrixError(NumericalError):
    """Singular or numerically non-invertible linear system."""


class NonUniquenessError(NumericalError):
    """The stationary distribution is not unique (reducible or periodic chain)."""
