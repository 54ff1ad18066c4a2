"""Exception types shared across the package."""


class IdescopeError(Exception):
    """Base class for all package errors."""


class DomainError(IdescopeError, ValueError):
    """A state left the constraint set of its model."""

    def __init__(self, message, index=None, value=None):
        super().__init__(message)
        self.index = index
        self.value = value


class OrderingError(IdescopeError, ValueError):
    """Time arguments violate the required ordering (e.g. tau > t)."""


class DivergenceError(IdescopeError, ArithmeticError):
    """A series or iteration did not converge within its cap.

    ``partial`` carries whatever was computed before giving up (a partial
    sum, a trace, ...).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class MissingMetadataError(IdescopeError, KeyError):
    """Analytic metadata required by an operation was not declared."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class PreconditionError(IdescopeError, ValueError):
    """A numerically checked precondition failed; ``witness`` shows where."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class EmptySetError(IdescopeError, ValueError):
    """An operation needs a nonempty point cloud."""
