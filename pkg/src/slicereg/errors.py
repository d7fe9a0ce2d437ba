"""Exception hierarchy shared by all pipeline stages."""


class SliceRegError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgument(SliceRegError, ValueError):
    pass


class InvalidCoordinate(InvalidArgument):
    pass


class FormatError(SliceRegError, ValueError):
    def __init__(self, key, detail=""):
        self.key = key
        msg = f"{key}: {detail}" if detail else str(key)
        super().__init__(msg)


class SizeMismatch(SliceRegError, ValueError):
    def __init__(self, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"raw payload size mismatch: expected {expected} bytes, got {actual}")


class IoError(SliceRegError, OSError):
    pass


class NoCandidates(SliceRegError):
    pass


class DimensionMismatch(SliceRegError, ValueError):
    pass


class TooFewPoints(SliceRegError, ValueError):
    pass


class DegenerateGeometry(SliceRegError, ValueError):
    pass
