"""Exception hierarchy shared across the toolkit."""


class LiplabError(Exception):
    """Base class for all liplab errors."""


class FormatError(LiplabError):
    """A file or payload does not match its declared format.

    Raised with enough context (path, byte offset, field) to locate the
    problem in the offending file.
    """

    def __init__(self, message, *, path=None, offset=None):
        if path is not None:
            message = f"{path}: {message}"
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.path = path
        self.offset = offset


class GeometryError(LiplabError):
    """Degenerate or inconsistent geometry (collinear landmarks,
    self-intersecting contours, zero-length segments)."""


class NumericalError(LiplabError):
    """A numerical failure: NaN/Inf where finite values are required,
    or a failed gradient verification."""
