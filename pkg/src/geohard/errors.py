"""Exception types.

Everything raised on bad input derives from :class:`ValidationError` and
maps to CLI exit code 1; transport and file-system failures derive from
:class:`TransportError` (or are plain ``OSError``) and map to exit code 2.
"""


class GeoHardError(Exception):
    """Base class for all library errors."""


class ValidationError(GeoHardError, ValueError):
    """Input violates a documented precondition or invariant."""


class MalformedRecord(ValidationError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class MissingField(MalformedRecord):
    pass


class UnknownLabel(ValidationError):
    def __init__(self, label: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}unknown label {label!r}")
        self.label = label
        self.line = line


class DuplicateId(ValidationError):
    def __init__(self, id_: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}duplicate id {id_!r}")
        self.id = id_
        self.line = line


class UnmappedLabel(ValidationError):
    pass


class EmptySegment(ValidationError):
    pass


class EmptyClass(ValidationError):
    def __init__(self, label: str, context: str = ""):
        super().__init__(f"class {label!r} has no instances{context}")
        self.label = label


class DimMismatch(ValidationError):
    def __init__(self, record: int, expected: int, got: int):
        super().__init__(f"record {record}: dimension {got}, expected {expected}")
        self.record = record


class NonFinite(ValidationError):
    pass


class BadMagic(ValidationError):
    pass


class Truncated(ValidationError):
    pass


class MissingId(ValidationError):
    def __init__(self, ids: list[str]):
        shown = ", ".join(repr(i) for i in ids[:20])
        more = f" (+{len(ids) - 20} more)" if len(ids) > 20 else ""
        super().__init__(f"ids missing from embedding matrix: {shown}{more}")
        self.ids = list(ids)


class DimDrift(ValidationError):
    pass


class ResponseMismatch(ValidationError):
    pass


class RangeE(ValidationError):
    pass


class KTooLarge(ValidationError):
    pass


class SizeMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class ZeroVariance(ValidationError):
    pass


class TooFew(ValidationError):
    pass


class UnknownId(ValidationError):
    pass


class NeedsE2(ValidationError):
    pass


class DivergenceError(ValidationError):
    pass


class TransportError(GeoHardError, OSError):
    """HTTP or network failure that persisted after retries."""
