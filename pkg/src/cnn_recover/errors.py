"""Exception hierarchy shared by the library and the command line tool."""


class ConfigError(ValueError):
    """Invalid configuration, dimensions or arguments."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (quadrature, eigensolver, non-finite values)."""


class RankDeficiencyError(NumericalError):
    """The second-moment estimate does not have ``t`` usable eigenvalues."""


class DecompositionError(NumericalError):
    """Tensor power iteration failed to converge."""


class MagnitudeRecoveryError(NumericalError):
    """Kernel norms or signs could not be recovered from moment coefficients."""


class DivergenceError(NumericalError):
    """Gradient descent produced a non-finite loss; ``report`` holds the partial trace."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
