"""Exception hierarchy shared across kronsub."""


class KronsubError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(KronsubError, ValueError):
    pass


class ZeroMatrix(KronsubError, ValueError):
    pass


class NotOrthonormal(KronsubError, ValueError):
    pass


class NotSymmetric(KronsubError, ValueError):
    pass


class SingularCovariance(KronsubError, ArithmeticError):
    pass


class DegenerateAngles(KronsubError, ArithmeticError):
    """A principal-angle product term vanished where the bound needs it nonzero."""


class InvalidRatio(KronsubError, ValueError):
    pass


class ZeroNoise(KronsubError, ValueError):
    """The Gaussian density is degenerate because sigma2 == 0."""


class InsufficientData(KronsubError, ValueError):
    pass


class SingularGram(KronsubError, ArithmeticError):
    pass


class EmptyClass(KronsubError, ValueError):
    pass


class ZeroSignal(KronsubError, ValueError):
    pass


class ObjectiveIncrease(KronsubError, RuntimeError):
    """Raised in debug mode when a block update raises the K-SLD2 objective."""


class ParseError(KronsubError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ShapeMismatch(KronsubError, ValueError):
    pass
