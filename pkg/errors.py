# errors.py
from __future__ import annotations

from typing import Optional


class OwplError(Exception):
    """
    Base error. `kind` is a short category such as "dimension-mismatch";
    `location` is a byte offset or line number when the error comes from a file.
    """

    def __init__(self, kind: str, message: str, location: Optional[str] = None):
        self.kind = kind
        self.location = location
        text = f"{kind}: {message}"
        if location:
            text = f"{text} (at {location})"
        super().__init__(text)


class CloudFormatError(OwplError, ValueError):
    pass


class InputError(OwplError, ValueError):
    pass


class DegenerateFitError(InputError):
    def __init__(self, message: str):
        super().__init__("degenerate-input", message)


class ConfigError(OwplError):
    def __init__(self, message: str):
        super().__init__("config-error", message)


class StageError(OwplError):
    def __init__(self, module: str, operation: str, cause: Exception):
        self.module = module
        self.operation = operation
        self.cause = cause
        super().__init__("stage-error", f"{module}.{operation}: {cause}")
