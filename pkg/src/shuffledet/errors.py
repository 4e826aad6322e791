"""Exception types shared across the package."""


class ShuffleDetError(Exception):
    """Base class for every error raised by shuffledet."""


class ShapeError(ShuffleDetError, ValueError):
    pass


class ParamError(ShuffleDetError, ValueError):
    pass


class DataError(ShuffleDetError, ValueError):
    pass


class AnalysisError(ShuffleDetError, ValueError):
    pass


class StoreError(ShuffleDetError, KeyError):
    def __str__(self) -> str:
        # KeyError repr-quotes its message; keep it readable
        return str(self.args[0]) if self.args else ""


class FormatError(ShuffleDetError, ValueError):
    """Malformed file. ``offset`` is a byte offset, ``record`` a record name or line."""

    def __init__(self, message: str, *, offset: int | None = None, record: str | None = None):
        details = []
        if record is not None:
            details.append(f"record {record!r}")
        if offset is not None:
            details.append(f"byte offset {offset}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
        self.offset = offset
        self.record = record
