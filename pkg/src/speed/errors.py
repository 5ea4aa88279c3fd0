"""Exception hierarchy shared by all pipeline stages."""


class SpeedError(Exception):
    """Base class for every error raised by this package."""


class EdfError(SpeedError):
    """Problem reading an EDF/EDF+ file."""


class MalformedHeader(EdfError):
    pass


class SizeMismatch(EdfError):
    pass


class EmptyRecording(EdfError):
    pass


class DiscontinuousEdf(EdfError):
    """EDF+D files are not supported."""


class MalformedTal(EdfError):
    pass


class RangeOverflow(EdfError):
    pass


class NoEegChannels(SpeedError):
    pass


class RecordingTooShort(SpeedError):
    pass


class NoEvents(SpeedError):
    pass


class SignalTooShort(SpeedError):
    pass


class DegenerateFit(SpeedError):
    pass


class TooFewGoodChannels(SpeedError):
    pass


class TooFewChannels(SpeedError):
    pass


class DegenerateCovariance(SpeedError):
    pass


class SingularSystem(SpeedError):
    pass


class TooFewSources(SpeedError):
    pass


class MalformedLog(SpeedError):
    pass
