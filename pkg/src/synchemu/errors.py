"""Exception hierarchy shared by all modules."""


class SynchEmuError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(SynchEmuError, ValueError):
    """Invalid parameters or inputs (CLI exit code 1)."""


class NumericalError(SynchEmuError, ArithmeticError):
    """A solver or integrator failed (CLI exit code 2)."""


# oscillator
class NoEquilibrium(NumericalError):
    pass


class NonRestoring(NumericalError):
    pass


class ZeroDamping(ValidationError):
    pass


class Divergence(NumericalError):
    pass


# network
class NetworkFileError(ValidationError):
    def __init__(self, message, lineno=None, path=None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


class SingularIsland(ValidationError):
    pass


class NonConvergence(NumericalError):
    pass


class SingularJacobian(NumericalError):
    pass


class ZeroVoltage(NumericalError):
    pass


class UnknownBus(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnknownBranch(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# devices / simulation / analysis
class InitializationInfeasible(NumericalError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class DimensionMismatch(ValidationError):
    pass


class NewtonDivergence(NumericalError):
    def __init__(self, message, time=None):
        self.time = time
        super().__init__(message)


class SingularAlgebraicJacobian(NumericalError):
    pass


class EigenSolverError(NumericalError):
    pass


class DegenerateMode(NumericalError):
    pass


class IncompleteCharacterization(ValidationError):
    def __init__(self, missing):
        self.missing = tuple(missing)
        super().__init__("missing characterization inputs: " + ", ".join(self.missing))
