"""Exception hierarchy shared by every debloatfs module."""


class DebloatError(Exception):
    """Base class for all debloatfs errors."""


# resolution errors

class NotFound(DebloatError, FileNotFoundError):
    def __init__(self, path):
        super().__init__(f"no such file: {path}")
        self.path = path


class IsDirectory(DebloatError, IsADirectoryError):
    def __init__(self, path):
        super().__init__(f"is a directory: {path}")
        self.path = path


class NotADirectory(DebloatError, NotADirectoryError):
    def __init__(self, path):
        super().__init__(f"not a directory: {path}")
        self.path = path


class SymlinkLoop(DebloatError):
    def __init__(self, path):
        super().__init__(f"too many levels of symbolic links: {path}")
        self.path = path


# image store errors

class ImageError(DebloatError):
    """Problem with an on-disk image bundle."""


class BadManifest(ImageError):
    pass


class MissingBlob(ImageError):
    def __init__(self, digest):
        super().__init__(f"missing blob {digest}")
        self.digest = digest


class CorruptBlob(ImageError):
    def __init__(self, digest, reason="digest mismatch"):
        super().__init__(f"corrupt blob {digest}: {reason}")
        self.digest = digest


class IoError(DebloatError, OSError):
    pass


# pipeline / state errors

class AlreadyConverted(DebloatError):
    pass


class ExportBeforeConvert(DebloatError):
    pass


class InvalidBaseDepth(DebloatError, ValueError):
    pass


class AnalysisFailed(DebloatError):
    pass


class BadTrace(DebloatError, ValueError):
    pass


class StateError(DebloatError):
    """The on-disk state bundle is missing, locked or inconsistent."""
