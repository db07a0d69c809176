"""Exception types raised across the package."""


class AeroplateError(Exception):
    """Base class for all package errors."""


class NonConvergence(AeroplateError):
    def __init__(self, iterations, residual, message=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message or f"solver did not converge after {iterations} iterations "
                                    f"(relative residual {residual:.3e})")


class SpectralUnavailable(AeroplateError):
    """Fractional norm requested on a grid above the eigendecomposition cap."""


class DomainMismatch(AeroplateError):
    pass


class TransonicInput(AeroplateError):
    """U too close to 1; the delay horizon is unbounded."""


class NonUniformTime(AeroplateError):
    pass


class OutOfWindow(AeroplateError):
    pass


class SolverDivergence(AeroplateError):
    pass


class RangeError(AeroplateError):
    pass


class InsufficientData(AeroplateError):
    pass


class NewtonDivergence(AeroplateError):
    def __init__(self, residuals, message=None):
        self.residuals = list(residuals)
        last = self.residuals[-1] if self.residuals else float("nan")
        super().__init__(message or f"Newton iteration diverged (last residual {last:.3e})")


class JacobianSingular(AeroplateError):
    pass


class EmptySet(AeroplateError):
    pass


class RangeDeficient(AeroplateError):
    def __init__(self, residual, message=None):
        self.residual = residual
        super().__init__(message or f"right-hand side outside the invertible range "
                                    f"(roundtrip residual {residual:.3e})")


class ConfigError(AeroplateError):
    """Configuration could not be parsed or validated."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class ParseError(ConfigError):
    def __init__(self, line, column, message):
        self.line = line
        self.column = column
        super().__init__([f"line {line}, column {column}: {message}"])


class ValidationError(ConfigError):
    """One or more ``(field, reason)`` violations."""

    def __init__(self, field, reason=None):
        if reason is not None:
            violations = [(field, reason)]
        else:
            violations = list(field)
        self.fields = [f for f, _ in violations]
        super().__init__([f"{f}: {r}" for f, r in violations])
