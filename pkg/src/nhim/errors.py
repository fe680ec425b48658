"""Exception hierarchy shared by all nhim modules."""


class NHIMError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(NHIMError, ValueError):
    """Malformed system or perturbation configuration."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            loc = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{loc}: {message}"
        super().__init__(message)


class ParseError(ConfigError):
    """Syntax error in an expression or config line."""


class DimensionError(ConfigError):
    """Declared dimensions disagree with the supplied expressions."""


class EvaluationError(NHIMError, ArithmeticError):
    """An expression produced a non-finite value (domain error)."""

    def __init__(self, message, point=None):
        self.point = point
        if point is not None:
            message = f"{message} at {point}"
        super().__init__(message)


class IntegrationError(NHIMError):
    """Non-finite state during time integration."""

    def __init__(self, message, time=None):
        self.time = time
        if time is not None:
            message = f"{message} (t = {time:.6g})"
        super().__init__(message)


class AdmissibilityError(NHIMError):
    """An iterate left the admissible eta-neighborhood."""


class ConvergenceError(NHIMError):
    """Fixed-point iteration did not converge within the iteration budget."""

    def __init__(self, message, history=None):
        self.history = list(history or [])
        super().__init__(message)


class ManifoldSolveError(NHIMError):
    """One or more grid nodes failed during a manifold solve.

    ``failures`` maps node coordinates (tuples) to the per-node exception.
    """

    def __init__(self, failures):
        self.failures = dict(failures)
        lines = [f"{len(self.failures)} node(s) failed:"]
        for node, exc in self.failures.items():
            coords = ", ".join(f"{c:.6g}" for c in node)
            lines.append(f"  x = ({coords}): {type(exc).__name__}: {exc}")
        super().__init__("\n".join(lines))


class RateFitError(NHIMError):
    """Exponential envelope fit failed or rates violate the hyperbolicity ordering."""
