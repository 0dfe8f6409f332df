"""Exception types raised across the package."""


class MeshTearError(Exception):
    """Base class for all package errors."""


class StructuralError(MeshTearError):
    """Indices or references that cannot describe a valid mesh."""


class ValidationError(MeshTearError):
    """Data that is structurally sound but violates an invariant."""


class GeometryError(MeshTearError):
    """Degenerate geometry where a construction is undefined."""


class StaleDeltaError(MeshTearError):
    """A delta that references faces no longer alive."""


class ParameterError(MeshTearError):
    """An out-of-range tuning parameter."""


class CoverageError(MeshTearError):
    """A live vertex ended up with no particle membership."""


class ParticleLookupError(MeshTearError):
    """An operation addressed a particle id that does not exist."""


class FormatError(MeshTearError):
    """Unrecognized or mismatched file format/version."""


class ParseError(MeshTearError):
    """Malformed content in a loaded file; carries a line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ProtocolError(MeshTearError):
    """Malformed or out-of-contract wire message."""


class StaleRevisionError(ProtocolError):
    """A message sent against an outdated session revision."""

    def __init__(self, message, current_revision):
        super().__init__(message)
        self.current_revision = current_revision
