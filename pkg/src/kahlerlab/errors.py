"""Exception hierarchy shared by all modules.

``ValidationError`` subclasses signal violated preconditions (CLI exit 2);
``NumericalError`` subclasses signal numerical failure (CLI exit 3).
"""


class LabError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(LabError, ValueError):
    """A precondition on the inputs does not hold."""


class NumericalError(LabError, ArithmeticError):
    """A numerical procedure failed on valid inputs."""


class SingularP(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class DefectiveM(NumericalError):
    pass


class BallDoesNotFit(ValidationError):
    pass


class NotPsh(NumericalError):
    pass


class NoEpsilonFound(NumericalError):
    pass


class DegenerateMetric(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, residual=None, iterate=None):
        super().__init__(message)
        self.residual = residual
        self.iterate = iterate


class PositivityLoss(NumericalError):
    pass


class LeftChart(NumericalError):
    pass


class SingularFiberBlock(NumericalError):
    pass
