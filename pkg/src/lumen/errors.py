"""Exception types raised across the package."""


class LumenError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(LumenError, ValueError):
    pass


class FormatError(LumenError):
    """Malformed file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(FormatError):
    pass


class DegenerateExposureError(LumenError):
    pass


class ResourceError(LumenError):
    def __init__(self, message, required_bytes=None):
        super().__init__(message)
        self.required_bytes = required_bytes


class IllConditionedError(LumenError):
    pass


class StateError(LumenError):
    pass


class TrainingDivergedError(LumenError):
    def __init__(self, message, last_good_epoch=None):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch


class DatasetError(LumenError):
    pass


class ConfigError(LumenError):
    pass
