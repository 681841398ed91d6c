"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class RoughVAError(Exception):
    """Base class for all package errors."""


class InputError(RoughVAError, ValueError):
    """Invalid arguments or malformed input data."""


class KernelDomainError(InputError):
    """Fractional kernel evaluated outside its domain."""


class UnsupportedKernelError(InputError):
    """Sum-of-exponentials requested for a Hurst parameter it cannot represent."""


class NumericalError(RoughVAError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite output."""


class SOEConstructionError(NumericalError):
    def __init__(self, message, achieved_error):
        super().__init__(message)
        self.achieved_error = achieved_error


class RiccatiConvergenceError(NumericalError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class TrainingError(NumericalError):
    def __init__(self, message, date=None, diagnostics=None):
        super().__init__(message)
        self.date = date
        self.diagnostics = diagnostics or {}


class SolverError(RoughVAError):
    """Fair-fee bracket could not be established or bisection failed."""

    def __init__(self, message, endpoint_prices=None):
        super().__init__(message)
        self.endpoint_prices = endpoint_prices or {}


class ConfigError(InputError):
    """Experiment configuration failed schema validation."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
