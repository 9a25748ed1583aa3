"""
Exception types shared by every carve module
"""


class CarveError(Exception):
    """Base class for all carve errors"""


class FormatError(CarveError):
    """A file could not be parsed"""

    def __init__(self, message, path=None, line=None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if self.path is not None:
            where = f"{self.path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")


class ValidationError(CarveError):
    """A domain type invariant does not hold"""


class EmptySurfaceError(CarveError):
    """The SDF has no sign change, so there is no surface to extract"""


class SurfaceVanishedError(EmptySurfaceError):
    """The surface disappeared while sculpting"""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        super().__init__(message)


class ShapeMismatchError(CarveError):
    """Array or image dimensions disagree"""


class ConfigError(CarveError):
    """Invalid configuration or missing inputs"""


class ImageValidationWarning(UserWarning):
    """An image is readable but violates a soft invariant"""


# Exit codes per pipeline stage
STAGE_EXIT_CODES = {
    "config": 2,
    "instantiate": 10,
    "fit": 11,
    "sculpt": 12,
    "unwrap": 13,
    "texture": 14,
    "render": 15,
}


class StageError(CarveError):
    """A pipeline stage failed; wraps the original cause"""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")

    @property
    def exit_code(self):
        return STAGE_EXIT_CODES.get(self.stage, 1)
