"""Exception types shared across the package."""

from __future__ import annotations


class PaperExtractError(Exception):
    """Base class for all package errors."""


class ValidationError(PaperExtractError):
    """Input data violates a structural or enum constraint."""


class ConfigurationError(PaperExtractError):
    """A run is wired up inconsistently (bad mode, missing credential, ...)."""


class ConfigParseError(ConfigurationError):
    """A config file is not valid JSON."""


class TeiParseError(PaperExtractError):
    """Malformed XML; message carries the parser position."""


class DocumentIdentityError(PaperExtractError):
    """A document has no usable DOI."""


class CoercionError(PaperExtractError):
    """A raw payload cannot be coerced to its field's kind."""

    def __init__(self, field_name: str, payload: object, detail: str = ""):
        self.field_name = field_name
        self.payload = payload
        tail = f": {detail}" if detail else ""
        super().__init__(f"field {field_name!r}: cannot coerce {payload!r} to a number{tail}")


class ConversionError(PaperExtractError):
    """Unit conversion outside the supported table."""


class LenientJsonError(PaperExtractError):
    """Payload is not JSON even after lenient cleaning."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (offset {offset})")


class StructureError(PaperExtractError):
    """Parsed JSON has the wrong top-level shape for record extraction."""


class AnnotationError(ValidationError):
    """Error-annotation rows violate the taxonomy or reference no aligned row."""


class TransportError(PaperExtractError):
    """Backend call failed after retries (or failed non-retryably)."""


class ReplayMissError(TransportError):
    """Replay backend has no cached response for a request hash."""

    def __init__(self, request_hash: str):
        self.request_hash = request_hash
        super().__init__(f"no cached response for request hash {request_hash}")
