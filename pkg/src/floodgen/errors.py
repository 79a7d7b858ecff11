"""Exception hierarchy.

Each family maps to a CLI exit code: config 2, data 3, numeric 4, I/O 5.
"""


class FloodgenError(Exception):
    exit_code = 1


class ConfigError(FloodgenError, ValueError):
    exit_code = 2


class DataError(FloodgenError, ValueError):
    exit_code = 3


class NumericError(FloodgenError, ArithmeticError):
    exit_code = 4


class StoreIOError(FloodgenError, OSError):
    exit_code = 5


# mesh
class PointOutsideStudyArea(DataError):
    pass


class MissingDepths(DataError):
    pass


class InsufficientEvents(DataError):
    pass


class MeshFingerprintMismatch(DataError):
    pass


# features
class NegativePrecipitation(DataError):
    pass


class EmptyWatershed(DataError):
    pass


class MissingCells(DataError):
    pass


class UnknownCell(DataError):
    pass


# estimator
class EmptyTrainingSet(DataError):
    pass


class InconsistentFeatureLength(DataError):
    pass


class FeatureLengthMismatch(DataError):
    pass


class DegenerateVariance(NumericError):
    pass


class CorruptStore(StoreIOError):
    pass


# generator
class TooFewRecords(DataError):
    pass


class AcceptanceRateTooLow(NumericError):
    pass


class EmptySample(DataError):
    pass


# pools / synthesis
class TooFewEvents(DataError):
    pass


class NegativeValue(DataError):
    pass


class EmptyPool(DataError):
    pass


# metrics
class ZeroVector(NumericError):
    pass


class ConstantVector(NumericError):
    pass


class LengthMismatch(DataError):
    pass


class SynthSmallerThanTrain(DataError):
    pass


class EmptyPartition(DataError):
    pass


# probability maps
class EmptyBatch(DataError):
    pass
