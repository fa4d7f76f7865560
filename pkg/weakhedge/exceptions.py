class WeakHedgeError(Exception):
    """Base class for every error raised by weakhedge"""


class ValidationError(WeakHedgeError, ValueError):
    """Invalid argument, domain or input data"""


class ConfigurationError(ValidationError):
    """Malformed or incomplete run configuration"""


class InfeasibleError(ValidationError):
    """A terminal datum below its obstacle, or a violated weak constraint"""


class CapacityError(WeakHedgeError):
    """An exhaustive enumeration was requested on a grid that is too large for it"""


class NumericalError(WeakHedgeError, ArithmeticError):
    """A numerical scheme left the regime in which its result can be trusted"""


class ContractionError(NumericalError):
    """K_g * dt >= 1, the implicit step is not a contraction"""


class IterationError(NumericalError):
    """Fixed-point iteration did not converge within the iteration budget"""


class PositivityError(NumericalError):

    def __init__(self, message: str, node: tuple = None):
        super().__init__(message)
        self.node = node


class DecompositionError(NumericalError):
    """Skorokhod complementarity failed while decomposing a process"""


class ContractError(NumericalError):
    """The process handed to a decomposition is not a Ref-submartingale"""
