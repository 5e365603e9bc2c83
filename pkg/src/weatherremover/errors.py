"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation."""


class ConfigError(ValueError):
    """A model or run configuration is inconsistent or unparsable."""


class FormatError(Exception):
    """A file (checkpoint, image, config) is malformed.

    ``offset`` is the byte position where parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        self.reason = message
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class CalibrationError(RuntimeError):
    """No candidate configuration reproduces the targets within tolerance."""

    def __init__(self, message: str, table=()):
        super().__init__(message)
        self.table = list(table)
