"""Exception types shared across the toolkit."""


class TypofuseError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(TypofuseError, ValueError):
    """Caller passed arguments that violate an operation's contract."""


class GeometryError(InvalidInputError):
    """Image too small for the font-size search (width below 6 px)."""


class DecodeError(TypofuseError):
    """Image bytes could not be decoded."""


class ConfigurationError(TypofuseError):
    """Missing or inconsistent configuration (font asset, truth ids, ...)."""


class ManifestError(TypofuseError):
    """Malformed manifest file; message carries the offending line or id."""


class IndexBuildError(TypofuseError):
    """Index construction rejected an entry; message names the offending id."""


class StoreFormatError(TypofuseError):
    """Index store file is corrupt. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class DegenerateFusionError(TypofuseError):
    """Sum fusion of (near-)antipodal vectors has no defined direction."""


class EncoderUnavailableError(TypofuseError):
    """Remote encoder unreachable after retries."""


class ProtocolError(TypofuseError):
    """Remote encoder responded outside the wire contract."""


class RemoteRequestError(TypofuseError):
    """Remote encoder rejected the request (4xx); carries the server message."""
