"""Exception types raised across the package."""


class DiformerError(Exception):
    """Base class for all package errors."""


class InvalidAudio(DiformerError, ValueError):
    pass


class InvalidCorpus(DiformerError, ValueError):
    pass


class InvalidSpec(DiformerError, ValueError):
    pass


class InvalidInput(DiformerError, ValueError):
    pass


class InvalidCost(DiformerError, ValueError):
    pass


class ShapeError(DiformerError, ValueError):
    """Tensor shapes disagree, usually a stride-schedule misconfiguration."""


class ParseError(DiformerError, ValueError):
    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ConfigMismatch(DiformerError, ValueError):
    """A serialized archive was written with a different configuration."""


class RefusesOverwrite(DiformerError, FileExistsError):
    pass
