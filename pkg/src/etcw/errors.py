"""Exception hierarchy.

Two families matter to callers: ``ValidationError`` for bad inputs or
options (CLI exit code 1) and ``CorruptDataError`` for archives or
bitstreams that fail integrity checks (CLI exit code 2).
"""

from __future__ import annotations


class EtcwError(Exception):
    """Base class for every error raised by this package.

    ``tensor`` and ``segment`` say where the problem is.  Archive errors
    also carry ``record``, the tensor's position in the file, which still
    identifies it when the stored name itself is damaged.
    """

    kind = "internal"

    def __init__(self, message: str, *, tensor: str | None = None, segment: int | None = None,
                 record: int | None = None):
        super().__init__(message)
        self.message = message
        self.tensor = tensor
        self.segment = segment
        self.record = record

    def __str__(self) -> str:
        where = []
        if self.tensor is not None:
            where.append(f"tensor {self.tensor!r}")
        if self.record is not None:
            where.append(f"record {self.record}")
        if self.segment is not None:
            where.append(f"segment {self.segment}")
        if where:
            return f"{', '.join(where)}: {self.message}"
        return self.message


class ValidationError(EtcwError, ValueError):
    kind = "validation"


class ManifestError(ValidationError):
    kind = "manifest"


class CorruptDataError(EtcwError):
    kind = "corrupt"


class FormatError(CorruptDataError):
    kind = "format"


class ChecksumError(CorruptDataError):
    kind = "checksum"


class TruncatedError(CorruptDataError):
    kind = "truncated"


class DecodeError(CorruptDataError):
    """A bitstream did not decode to the expected symbol count.

    ``reason`` is one of ``"exhausted"``, ``"trailing"`` or ``"invalid"``.
    """

    kind = "decode"

    def __init__(self, message: str, *, reason: str, tensor: str | None = None,
                 segment: int | None = None, record: int | None = None):
        super().__init__(message, tensor=tensor, segment=segment, record=record)
        self.reason = reason
