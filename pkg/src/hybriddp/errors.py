"""Exception hierarchy. The CLI maps each class to an exit code."""


class HybridDPError(Exception):
    exit_code = 1


class ValidationError(HybridDPError, ValueError):
    """Bad input: wrong shape, out-of-range parameter, non-finite values."""

    exit_code = 2


class UnsupportedError(ValidationError):
    """A valid input combination that this library does not handle."""


class InfeasibleError(HybridDPError):
    """A calibration target that no noise scale in the bracket can meet."""

    exit_code = 3


class NumericError(HybridDPError, ArithmeticError):
    """Quadrature or iteration failed to converge."""

    exit_code = 4
