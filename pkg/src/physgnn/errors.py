"""Exception types raised across the package."""


class PhysGnnError(Exception):
    """Base class for all package errors."""


class GraphError(PhysGnnError):
    pass


class IsolatedNodeError(GraphError):
    pass


class EmptyOrFullSubset(GraphError):
    pass


class TooLargeForEnumeration(GraphError):
    pass


class DisconnectedGraph(GraphError):
    pass


class DimensionMismatch(PhysGnnError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NonFiniteInput(PhysGnnError, FloatingPointError):
    pass


class NonScalarLoss(PhysGnnError, ValueError):
    pass


class ConvergenceFailure(PhysGnnError, RuntimeError):
    pass


class CgNonConvergence(ConvergenceFailure):
    def __init__(self, residual, iterations):
        super().__init__(f"conjugate gradient did not converge: residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


class ExplicitInstability(PhysGnnError, FloatingPointError):
    pass


class ConfigError(PhysGnnError, ValueError):
    pass


class AlphaOutOfRange(ConfigError):
    pass


class EmptyMask(PhysGnnError, ValueError):
    pass


class LengthMismatch(PhysGnnError, ValueError):
    pass


class DataError(PhysGnnError):
    pass


class MissingFile(DataError, FileNotFoundError):
    pass


class MalformedRow(DataError, ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class LabelOutOfRange(DataError, ValueError):
    pass


class InsufficientClassPopulation(DataError, ValueError):
    pass
