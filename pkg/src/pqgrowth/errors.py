"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """A precondition on an argument was violated."""


class UnsupportedFlavor(InvalidArgument):
    """The operation is not defined for this kind of integrand."""


class OutOfRange(InvalidArgument):
    """A parameter falls outside the range where a formula applies."""


class InternalError(RuntimeError):
    """A self-check failed. Carries the offending objects in ``detail``."""

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail


class SolverDiagnostics(RuntimeError):
    """The minimisation could not proceed (e.g. convexity was violated)."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
