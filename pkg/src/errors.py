from pathlib import Path
from typing import Union


class AnchorError(Exception):
    """base for every error the pipeline raises on bad input."""


class ConfigError(AnchorError):
    pass


class MissingFileError(AnchorError):
    def __init__(self, path: Union[str, Path]) -> None:
        self.path = Path(path)
        super().__init__(f"missing file: {self.path}")


class ParseError(AnchorError):
    """malformed row in a text input.

    Attributes:
        path (Path): offending file
        line (int): 1-based line number (the header is line 1)
    """

    def __init__(self, path: Union[str, Path], line: int, reason: str) -> None:
        self.path = Path(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {reason}")


def read_utf8(path: Union[str, Path]) -> str:
    """file contents as text; undecodable bytes raise ParseError at their line."""
    data = Path(path).read_bytes()
    try:
        return data.decode("utf-8-sig")
    except UnicodeDecodeError as e:
        raise ParseError(path, data.count(b"\n", 0, e.start) + 1, "not valid UTF-8") from None


class DataValidationError(AnchorError):
    def __init__(self, reason: str) -> None:
        self.reason = reason
        super().__init__(reason)


class EmptyAudioError(AnchorError):
    pass


class UnknownPageError(AnchorError):
    pass


class EmptyImageError(AnchorError):
    pass


class NoPassagesOnPageError(AnchorError):
    pass


class EmptyLayoutError(AnchorError):
    pass


class EmptyDataError(AnchorError):
    pass


class SingleClassError(AnchorError):
    pass


class VersionMismatchError(AnchorError):
    pass


class CorruptModelError(AnchorError):
    pass


class NoVisiblePassagesError(AnchorError):
    pass


class LengthMismatchError(AnchorError):
    pass


class TooFewNotesError(AnchorError):
    pass


class TooFewParticipantsError(AnchorError):
    pass


class UnknownTagError(AnchorError):
    pass


class LayoutTooSmallError(AnchorError):
    pass
