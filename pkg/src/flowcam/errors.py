"""Exception hierarchy shared by all flowcam modules.

Two broad families matter for the CLI exit codes: ``DataError`` (bad or
unusable input, exit code 2) and ``ModelError`` (training/persistence
problems, exit code 3).
"""


class FlowcamError(Exception):
    """Base class for all errors raised by this package."""


class DataError(FlowcamError):
    """Input data is malformed, inconsistent, or unusable."""


class ModelError(FlowcamError):
    """A model could not be trained, applied, or persisted."""


# capture parsing
class UnknownMagic(DataError):
    pass


class UnsupportedLinkType(DataError):
    pass


class TruncatedCapture(DataError):
    pass


class MalformedHeader(DataError):
    pass


# flow metering
class ClockRegression(DataError):
    pass


# dataset handling
class SchemaMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class AllConstant(DataError):
    pass


class ZeroStd(DataError):
    pass


class TooFewRows(DataError):
    pass


class SingleClass(DataError):
    pass


class KTooLarge(DataError):
    pass


class MissingDataset(DataError):
    pass


class LengthMismatch(DataError):
    pass


# model training / prediction
class EmptyData(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class NonPositiveNu(ModelError):
    pass


class EmptyScores(ModelError):
    pass


class WidthMismatch(ModelError):
    pass


# persistence
class VersionMismatch(ModelError):
    pass


class CorruptPayload(ModelError):
    pass
