"""Exception hierarchy shared by all modules."""


class KHessianError(Exception):
    """Base class for every error raised by this package."""


class DomainError(KHessianError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConeError(DomainError):
    """A spectrum or Hessian is outside the required Garding cone."""


class DegenerateGridError(KHessianError):
    """A grid has no interior node to solve for."""


class SolverError(KHessianError):
    """Base class for Newton failures; carries a diagnostics dict."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class NonconvergenceError(SolverError):
    pass


class ConeCollapseError(SolverError):
    pass


class SafeguardError(KHessianError):
    """The linearization was requested at an inadmissible iterate."""


class ManufacturedProblemError(KHessianError):
    """An exact solution failed the admissibility check at a sample point."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ConsistencyError(KHessianError):
    pass


class InputError(KHessianError, ValueError):
    pass


class AlignmentError(KHessianError, ValueError):
    pass


class BoxTooSmallError(KHessianError):
    pass


class ExpressionError(KHessianError, ValueError):
    """Syntax or evaluation error in a psi/g expression.

    ``offset`` is the byte offset into the source text, when known.
    """

    def __init__(self, message, offset=None, names=()):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset
        self.names = tuple(names)


class ConfigError(KHessianError, ValueError):
    """Invalid experiment configuration; ``messages`` holds every problem found."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))
