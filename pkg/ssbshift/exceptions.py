class Error(Exception):
    pass


class ConfigError(Error):
    pass


class SampleRateError(Error):
    pass


class SegmentTooShortError(Error):
    pass


class MemoryBudgetError(Error):
    pass


class UnsupportedFormatError(Error):
    pass


class AudioIOError(Error):
    pass


class ChannelError(Error):
    pass


class EmptyInputError(Error):
    pass


class LengthMismatchError(Error):
    pass


class SynthesisError(Error):
    pass
