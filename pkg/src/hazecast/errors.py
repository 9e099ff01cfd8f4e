"""Exception hierarchy.

``ValidationError`` subclasses signal bad input (CLI exit code 1);
``HazecastRuntimeError`` subclasses signal failures during computation
(CLI exit code 2).
"""


class HazecastError(Exception):
    """Base class for all package errors."""


class ValidationError(HazecastError, ValueError):
    pass


class HazecastRuntimeError(HazecastError, RuntimeError):
    pass


# data
class MissingColumn(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyFile(ValidationError):
    pass


class SeriesTooShort(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


# entropy
class ZeroTotalWeight(ValidationError):
    pass


class InvalidBeta(ValidationError):
    pass


class TooFewSegments(ValidationError):
    pass


# clustering
class ZeroSumSeries(ValidationError):
    pass


class EmptyCluster(ValidationError):
    pass


class InvalidK(ValidationError):
    pass


class SingleCluster(ValidationError):
    pass


# tensors / model
class ShapeMismatch(ValidationError):
    pass


class NotScalarLoss(ValidationError):
    pass


class UnrecordedId(ValidationError):
    pass


class OddHeadDim(ValidationError):
    pass


class StateStepMismatch(ValidationError):
    pass


class EmptyTrainSet(ValidationError):
    pass


class DivergedLoss(HazecastRuntimeError):
    pass


class ClusterTooSmall(HazecastRuntimeError):
    pass


# search
class NonFiniteObjective(ValidationError):
    pass


class InfeasibleBounds(ValidationError):
    pass


# pipeline
class NoModels(ValidationError):
    pass


class IoError(HazecastRuntimeError):
    pass
