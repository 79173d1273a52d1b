"""Exception hierarchy shared by every codec layer."""


class MGBVQError(Exception):
    """Base class for all codec errors."""


class InvalidInputError(MGBVQError, ValueError):
    pass


class ResourceLimitError(MGBVQError):
    pass


class TrainingError(MGBVQError):
    pass


class ConfigError(MGBVQError):
    pass


class FormatError(MGBVQError):
    """Bad magic or unsupported version in a stream or model file."""


class ModelMismatchError(MGBVQError):
    """Stream was written with a different model than the one supplied."""


class CorruptStreamError(MGBVQError):
    def __init__(self, message, grid=None):
        if grid is not None:
            message = f"grid G_{grid}: {message}"
        super().__init__(message)
        self.grid = grid
