"""Exception hierarchy shared by the pipeline stages."""


class IsowordError(Exception):
    """Base class for all errors raised by this package."""


class AudioError(IsowordError):
    pass


class MalformedContainer(AudioError):
    pass


class UnsupportedEncoding(AudioError):
    pass


class EmptyAudio(AudioError):
    pass


class DatasetError(IsowordError):
    pass


class EmptyDataset(DatasetError):
    pass


class EmptyClass(DatasetError):
    pass


class IoFailure(IsowordError):
    pass


class DegenerateBand(IsowordError):
    pass


class ShapeMismatch(IsowordError, ValueError):
    pass


class DegenerateInput(IsowordError, ValueError):
    pass


class IndexOutOfRange(IsowordError, IndexError):
    pass


class UnsupportedShape(IsowordError, ValueError):
    pass


class UnknownArchitecture(IsowordError, ValueError):
    pass


class TooFewExamples(IsowordError, ValueError):
    pass


class CacheError(IsowordError):
    pass


class CheckpointError(IsowordError):
    pass


class ReportError(IsowordError):
    pass
