"""Exception hierarchy shared by every module of the package."""


class TripleStreamError(Exception):
    """Base class for all package errors."""


class ShapeError(TripleStreamError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class UnknownOpError(TripleStreamError, ValueError):
    pass


class NonScalarOutputError(TripleStreamError, ValueError):
    pass


class NonFiniteError(TripleStreamError, FloatingPointError):
    """A NaN or infinity appeared where only finite values are allowed."""


class ZeroVectorError(TripleStreamError, ValueError):
    pass


class ConfigError(TripleStreamError, ValueError):
    pass


class ClassTooSmallError(TripleStreamError, ValueError):
    pass


class DatasetFormatError(TripleStreamError, ValueError):
    """Base for on-disk dataset problems."""


class MalformedManifestError(DatasetFormatError):
    pass


class TruncatedBlobError(DatasetFormatError):
    pass


class NoValidTripletError(TripleStreamError, ValueError):
    pass


class ZeroPriorError(TripleStreamError, ValueError):
    pass


class MissingHeadError(TripleStreamError, KeyError):
    pass


class EmptyLabelsError(TripleStreamError, ValueError):
    pass


class TooFewClassesError(TripleStreamError, ValueError):
    pass


class CheckpointError(TripleStreamError, ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class CorruptBlobError(CheckpointError):
    pass


class EmptyIndexError(TripleStreamError, ValueError):
    pass


class EmptyTestClassError(TripleStreamError, ValueError):
    pass


class DegenerateDistancesError(TripleStreamError, ValueError):
    pass


class IncompatibleError(TripleStreamError, ValueError):
    """Checkpoint and data disagree on shapes or dimensions."""
