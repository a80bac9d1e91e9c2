"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RoomsmithError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RoomsmithError):
    """A domain value or request violates its invariants."""


class LayoutParseError(RoomsmithError):
    """Layout text could not be parsed into a scene.

    Carries the location of the offending construct so callers can point at
    the exact spot in a model completion.
    """

    def __init__(self, message: str, *, line: int = 0, column: int = 0,
                 selector: str | None = None):
        location = f"line {line}, column {column}"
        if selector:
            location += f", selector '{selector}'"
        super().__init__(f"{message} ({location})")
        self.message = message
        self.line = line
        self.column = column
        self.selector = selector


class DescriptionFormatError(RoomsmithError):
    """A description list had no parseable entries."""


class ConfigurationError(RoomsmithError):
    """Invalid or missing configuration."""


class GatewayError(RoomsmithError):
    """Base class for model-backend failures."""


class TransportError(GatewayError):
    """The backend could not be reached."""


class GatewayTimeoutError(TransportError):
    """The backend did not answer within the configured timeout."""


class HttpStatusError(GatewayError):
    """The backend answered with a non-2xx status."""

    def __init__(self, message: str, *, status: int):
        super().__init__(message)
        self.status = status


class CapabilityError(GatewayError):
    """The backend does not support the requested operation."""


class RetrievalError(RoomsmithError):
    """Scoring or ranking a candidate failed.

    ``asset_id`` identifies the candidate whose scoring failed, when known.
    """

    def __init__(self, message: str, *, asset_id: str | None = None):
        if asset_id:
            message = f"{message} (asset '{asset_id}')"
        super().__init__(message)
        self.asset_id = asset_id


class GenerationError(RoomsmithError):
    """A pipeline stage exhausted its retries.

    ``raw_outputs`` holds the rejected completions for debugging.
    """

    def __init__(self, message: str, *, stage: str,
                 raw_outputs: list[str] | None = None):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
        self.raw_outputs = list(raw_outputs or [])
