"""Exception hierarchy shared by all analyses."""


class TfhaError(Exception):
    """Base class for every error raised by this package."""


class NetlistError(TfhaError, ValueError):
    pass


class NetlistSyntaxError(NetlistError):
    """A malformed card. ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class UnknownDeviceKind(NetlistSyntaxError):
    pass


class DuplicateName(NetlistSyntaxError):
    pass


class UnknownParameter(TfhaError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class UnknownTarget(TfhaError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ShapeMismatch(TfhaError, ValueError):
    pass


class NonFiniteState(TfhaError, FloatingPointError):
    pass


class HarmonicOverflow(TfhaError, ValueError):
    pass


class SolverError(TfhaError, RuntimeError):
    """Numerical non-convergence; the CLI maps these to exit code 2."""


class NewtonDivergence(SolverError):
    def __init__(self, message, residual_norm=None):
        self.residual_norm = residual_norm
        super().__init__(message)


class SingularIterationMatrix(SolverError):
    pass


class NoSteadyState(SolverError):
    def __init__(self, message, mismatch_history=()):
        self.mismatch_history = list(mismatch_history)
        super().__init__(message)


class SingularJacobian(SolverError):
    def __init__(self, message, condition_estimate=None):
        self.condition_estimate = condition_estimate
        super().__init__(message)


class HbDivergence(SolverError):
    def __init__(self, message, residual_history=()):
        self.residual_history = list(residual_history)
        super().__init__(message)


class ZeroFineNorm(TfhaError, ZeroDivisionError):
    pass


class NotConverged(SolverError):
    """Harmonic refinement hit the grid limit before reaching ``err_tol``.

    ``results`` holds the sensitivities of the last level, ``estimates`` the
    per-parameter error estimates.
    """

    def __init__(self, message, results=(), estimates=()):
        self.results = list(results)
        self.estimates = list(estimates)
        super().__init__(message)
