"""The ``.etcw`` compressed-model archive.

Layout, little-endian throughout::

    "ETCW" | u16 version | u8 bits | u8 flags | u32 tensor_count
    u64 shuffle_seed | u32 target_elements (0 = one segment per tensor)
    per tensor:
        u16 name_len | name (utf-8) | u8 rank | rank x u32 dims
        u8 scheme (0 unsigned, 1 asymmetric; bit 7 = degenerate grid)
        tensor granularity: f32 scale | f32 zero_point
        block granularity:  u32 block_size | n x f32 scale | n x f32 zero_point
                            | ceil(n/8) bytes degenerate bitmap (MSB-first)
        2^bits x u8 code lengths
        u32 segment_count | per segment: u32 element_count | u64 byte_offset | u64 bit_length
        u64 tensor checksum
    payload: every segment, byte-aligned, in tensor then segment order
    u64 archive checksum

``byte_offset`` is relative to the start of the payload.  Checksums are
XXH64 with seed 0 (XXH64(b"") = 0xEF46DB3751D8E999, XXH64(b"abc") =
0x44BC2CF5AD770999).  A tensor checksum covers that tensor's record bytes
(up to, not including, the checksum) followed by its payload bytes; the
archive checksum covers every byte before it.

``flags`` bit 0 marks block granularity; other bits are reserved.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import xxhash

from .errors import (ChecksumError, CorruptDataError, FormatError, TruncatedError,
                     ValidationError)
from .huffman import Bitstream, HuffmanCodebook
from .parallel_decode import EncodedTensor, Segment
from .quantizer import SCHEMES, QuantParams, QuantTensor

MAGIC = b"ETCW"
FORMAT_VERSION = 1
FLAG_BLOCK = 0x01
_SCHEME_CODES = {name: i for i, name in enumerate(SCHEMES)}
_DEGENERATE = 0x80

_HEADER = struct.Struct("<4sHBBIQI")
_SEGMENT = struct.Struct("<IQQ")


def xxh64(data) -> int:
    return xxhash.xxh64_intdigest(data)


def _is_f32(x: float) -> bool:
    return float(np.float32(x)) == x


@dataclass(frozen=True, eq=False)
class TensorRecord:
    name: str
    shape: tuple[int, ...]
    params: tuple[QuantParams, ...]
    block_size: int | None
    codebook: HuffmanCodebook
    segments: tuple[Segment, ...]
    payload: bytes
    checksum: int = 0

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def bit_length(self) -> int:
        last = self.segments[-1]
        return last.bit_offset + last.bit_length

    def encoded(self) -> EncodedTensor:
        return EncodedTensor(self.name, Bitstream(self.payload, self.bit_length),
                             self.segments, self.codebook)

    def quant_tensor(self, codes: np.ndarray) -> QuantTensor:
        return QuantTensor(self.name, self.shape, self.params, codes, self.block_size)

    def __eq__(self, other):
        if not isinstance(other, TensorRecord):
            return NotImplemented
        return (self.name, self.shape, self.params, self.block_size, self.codebook,
                self.segments, self.payload) == (
                    other.name, other.shape, other.params, other.block_size, other.codebook,
                    other.segments, other.payload)


@dataclass(frozen=True)
class ArchiveOptions:
    bits: int
    granularity: str = "tensor"
    shuffle_seed: int = 0
    target_elements: int | None = 65536

    @property
    def flags(self) -> int:
        return FLAG_BLOCK if self.granularity == "block" else 0


@dataclass(frozen=True, eq=False)
class ModelArchive:
    format_version: int
    model_name: str
    bits: int
    granularity: str
    shuffle_seed: int
    target_elements: int | None
    records: tuple[TensorRecord, ...]
    archive_checksum: int = 0
    # (start, end) file offsets of each record, and of the header/payload
    record_spans: tuple[tuple[int, int], ...] = field(default=(), repr=False)
    payload_span: tuple[int, int] = field(default=(0, 0), repr=False)
    file_size: int = 0

    @property
    def options(self) -> ArchiveOptions:
        return ArchiveOptions(self.bits, self.granularity, self.shuffle_seed, self.target_elements)

    def record(self, name: str) -> TensorRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def encoded_tensors(self) -> list[EncodedTensor]:
        return [r.encoded() for r in self.records]


def make_record(qt: QuantTensor, codebook: HuffmanCodebook, bitstream: Bitstream,
                segments: Sequence[Segment]) -> TensorRecord:
    return TensorRecord(qt.name, tuple(qt.shape), qt.params, qt.block_size, codebook,
                        tuple(segments), bitstream.payload)


# -- writing ----------------------------------------------------------------

def _pack_params(rec: TensorRecord, block: bool) -> bytes:
    first = rec.params[0]
    if not block:
        if rec.block_size is not None:
            raise ValidationError("block-quantized tensor in a tensor-granularity archive",
                                  tensor=rec.name)
        if not (_is_f32(first.scale) and _is_f32(first.zero_point)):
            raise ValidationError("scale/zero_point not representable as float32",
                                  tensor=rec.name)
        scheme = _SCHEME_CODES[first.scheme] | (_DEGENERATE if first.degenerate else 0)
        return struct.pack("<Bff", scheme, first.scale, first.zero_point)
    if rec.block_size is None:
        raise ValidationError("tensor-granularity tensor in a block archive", tensor=rec.name)
    if any(p.scheme != "asymmetric" for p in rec.params):
        raise ValidationError("block grids must be asymmetric", tensor=rec.name)
    scale = np.array([p.scale for p in rec.params], dtype=np.float64)
    zero = np.array([p.zero_point for p in rec.params], dtype=np.float64)
    scale32, zero32 = scale.astype("<f4"), zero.astype("<f4")
    if not (np.array_equal(scale32, scale) and np.array_equal(zero32, zero)):
        raise ValidationError("scale/zero_point not representable as float32", tensor=rec.name)
    bitmap = np.packbits(np.array([p.degenerate for p in rec.params], dtype=bool))
    return (struct.pack("<BI", _SCHEME_CODES["asymmetric"], rec.block_size)
            + scale32.tobytes() + zero32.tobytes() + bitmap.tobytes())


def _pack_record(rec: TensorRecord, bits: int, block: bool, payload_offset: int) -> bytes:
    name = rec.name.encode("utf-8")
    if not name or len(name) > 0xFFFF:
        raise ValidationError("tensor name must be 1..65535 utf-8 bytes", tensor=rec.name)
    if len(rec.shape) > 255 or any(not 0 < d <= 0xFFFFFFFF for d in rec.shape):
        raise ValidationError(f"shape {list(rec.shape)} does not fit the format", tensor=rec.name)
    if rec.codebook.bits != bits:
        raise ValidationError(f"{rec.codebook.bits}-bit codebook in a {bits}-bit archive",
                              tensor=rec.name)
    parts = [struct.pack("<H", len(name)), name,
             struct.pack(f"<B{len(rec.shape)}I", len(rec.shape), *rec.shape),
             _pack_params(rec, block), rec.codebook.to_bytes(),
             struct.pack("<I", len(rec.segments))]
    for seg in rec.segments:
        if seg.element_count > 0xFFFFFFFF:
            raise ValidationError("segment holds more than 2^32-1 elements", tensor=rec.name)
        parts.append(_SEGMENT.pack(seg.element_count, payload_offset + seg.byte_offset,
                                   seg.bit_length))
    return b"".join(parts)


def _check_record(rec: TensorRecord, bits: int) -> None:
    if rec.params[0].bits != bits:
        raise ValidationError(f"{rec.params[0].bits}-bit codes in a {bits}-bit archive",
                              tensor=rec.name)
    if sum(s.element_count for s in rec.segments) != rec.size:
        raise ValidationError("segment element counts do not sum to the tensor size",
                              tensor=rec.name)
    pos = 0
    for k, seg in enumerate(rec.segments):
        if seg.bit_offset != 8 * pos:
            raise ValidationError("segments are not packed back to back", tensor=rec.name,
                                  segment=k)
        pos += seg.byte_length
    if pos != len(rec.payload):
        raise ValidationError(f"payload is {len(rec.payload)} bytes, segments need {pos}",
                              tensor=rec.name)


def write_archive(tensors, options: ArchiveOptions) -> bytes:
    """Serialize tensors to archive bytes.

    ``tensors`` holds ``TensorRecord``s or ``(QuantTensor, HuffmanCodebook,
    Bitstream, segments)`` tuples.  Everything is validated before any
    bytes are produced.
    """
    records = [t if isinstance(t, TensorRecord) else make_record(*t) for t in tensors]
    names = [r.name for r in records]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise ValidationError("duplicate tensor name", tensor=dup)
    if options.granularity not in ("tensor", "block"):
        raise ValidationError(f"unknown granularity {options.granularity!r}")
    target = options.target_elements or 0
    if not 0 <= target <= 0xFFFFFFFF:
        raise ValidationError(f"target_elements {target} does not fit in u32")
    if not 0 <= options.shuffle_seed < 1 << 64:
        raise ValidationError(f"shuffle_seed {options.shuffle_seed} does not fit in u64")
    for rec in records:
        _check_record(rec, options.bits)

    block = options.granularity == "block"
    out = [_HEADER.pack(MAGIC, FORMAT_VERSION, options.bits, options.flags, len(records),
                        options.shuffle_seed, target)]
    payload_offset = 0
    for rec in records:
        body = _pack_record(rec, options.bits, block, payload_offset)
        h = xxhash.xxh64(body)
        h.update(rec.payload)
        out.append(body)
        out.append(struct.pack("<Q", h.intdigest()))
        payload_offset += len(rec.payload)
    out.extend(rec.payload for rec in records)
    data = b"".join(out)
    return data + struct.pack("<Q", xxh64(data))


def save_archive(path: str | os.PathLike, tensors, options: ArchiveOptions) -> int:
    """Write an archive file; the model name is the file stem when read back."""
    path = Path(path)
    data = write_archive(tensors, options)
    path.write_bytes(data)
    return len(data)


# -- reading ----------------------------------------------------------------

class _Cursor:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise TruncatedError("archive ends inside the tensor records")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_record(cur: _Cursor, bits: int, block: bool):
    """Parse one tensor record.  Only record-local consistency is checked
    here, so damage to one record cannot be blamed on another."""
    (name_len,) = cur.unpack("<H")
    try:
        name = cur.take(name_len).decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("tensor name is not valid utf-8") from None
    if not name or any(c.isspace() for c in name):
        raise FormatError(f"invalid tensor name {name!r}")
    try:
        return _read_record_body(cur, name, bits, block)
    except CorruptDataError as exc:
        if exc.tensor is None:
            exc.tensor = name
        raise


def _read_record_body(cur: _Cursor, name: str, bits: int, block: bool):
    (rank,) = cur.unpack("<B")
    shape = cur.unpack(f"<{rank}I")
    if any(d == 0 for d in shape):
        raise FormatError(f"zero dimension in shape {list(shape)}", tensor=name)
    n = math.prod(shape)

    (scheme_byte,) = cur.unpack("<B")
    degenerate = bool(scheme_byte & _DEGENERATE)
    scheme_id = scheme_byte & ~_DEGENERATE
    if scheme_id >= len(SCHEMES):
        raise FormatError(f"unknown scheme code {scheme_byte:#x}", tensor=name)
    scheme = SCHEMES[scheme_id]
    try:
        if not block:
            scale, zero = cur.unpack("<ff")
            params = (QuantParams(scheme, bits, scale, zero, degenerate),)
            block_size = None
        else:
            if degenerate or scheme != "asymmetric":
                raise FormatError("block grids must be plain asymmetric", tensor=name)
            (block_size,) = cur.unpack("<I")
            if block_size < 2:
                raise FormatError(f"block size {block_size} below 2", tensor=name)
            nblocks = -(-n // block_size)
            scales = np.frombuffer(cur.take(4 * nblocks), dtype="<f4")
            zeros = np.frombuffer(cur.take(4 * nblocks), dtype="<f4")
            flags = np.unpackbits(np.frombuffer(cur.take((nblocks + 7) // 8), dtype=np.uint8))
            params = tuple(QuantParams("asymmetric", bits, float(s), float(z), bool(d))
                           for s, z, d in zip(scales, zeros, flags[:nblocks]))
    except ValidationError as exc:
        raise FormatError(f"invalid quantization parameters: {exc.message}", tensor=name) from None

    try:
        codebook = HuffmanCodebook.from_bytes(bits, cur.take(1 << bits))
    except ValidationError as exc:
        raise FormatError(f"invalid codebook: {exc.message}", tensor=name) from None

    present = [n for n in codebook.lengths if n]
    min_len, max_len = min(present), max(present)
    (count,) = cur.unpack("<I")
    if count == 0 or count > n:
        raise FormatError(f"implausible segment count {count}", tensor=name)
    table = cur.take(_SEGMENT.size * count)
    segments = []
    first_offset = position = None
    elem = 0
    for k, (elements, byte_offset, bit_length) in enumerate(_SEGMENT.iter_unpack(table)):
        if first_offset is None:
            first_offset = position = byte_offset
        if byte_offset != position:
            raise FormatError("segment is not where the previous one ended",
                              tensor=name, segment=k)
        if elements == 0:
            raise FormatError("empty segment", tensor=name, segment=k)
        if not min_len * elements <= bit_length <= max_len * elements:
            raise FormatError(f"implausible bit length {bit_length}", tensor=name, segment=k)
        segments.append(Segment(name, k, elem, elements, 8 * (byte_offset - first_offset),
                                bit_length))
        elem += elements
        position += (bit_length + 7) // 8
    if elem != n:
        raise FormatError(f"segments hold {elem} elements, shape needs {n}", tensor=name)
    (checksum,) = cur.unpack("<Q")
    return _RawRecord(name, shape, params, block_size, codebook, tuple(segments),
                      first_offset, position, checksum)


class _RawRecord(NamedTuple):
    name: str
    shape: tuple[int, ...]
    params: tuple[QuantParams, ...]
    block_size: int | None
    codebook: HuffmanCodebook
    segments: tuple[Segment, ...]
    payload_lo: int   # payload-relative byte range
    payload_hi: int
    checksum: int


def _read_header(data: bytes) -> tuple:
    if len(data) < _HEADER.size:
        raise TruncatedError("file too short for an archive header")
    header = _HEADER.unpack_from(data)
    magic, version, bits, flags = header[:4]
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    if bits not in (4, 8):
        raise FormatError(f"unsupported bit-width {bits}")
    if flags & ~FLAG_BLOCK:
        raise FormatError(f"unknown flag bits {flags:#x}")
    return header


def _parse(data: bytes, header: tuple, model_name: str,
           check_archive_checksum: bool = True) -> ModelArchive:
    _, version, bits, flags, count, seed, target = header
    block = bool(flags & FLAG_BLOCK)
    cur = _Cursor(data, _HEADER.size)
    raw, spans = [], []
    for i in range(count):
        start = cur.pos
        try:
            raw.append(_read_record(cur, bits, block))
        except CorruptDataError as exc:
            raise type(exc)(exc.message, tensor=exc.tensor, segment=exc.segment,
                            record=i) from None
        spans.append((start, cur.pos))

    # per-tensor integrity first, so damage is pinned to its tensor
    payload_start = cur.pos
    payload_len = len(data) - payload_start - 8
    need = max((r.payload_hi for r in raw), default=0)

    def record_intact(i: int) -> bool:
        r, (start, end) = raw[i], spans[i]
        h = xxhash.xxh64(data[start:end - 8])
        h.update(data[payload_start + r.payload_lo:payload_start + r.payload_hi])
        return h.intdigest() == r.checksum

    if need > payload_len:
        # a cut file has lost its trailing checksum, so every byte left is payload
        present = len(data) - payload_start
        culprit = next((i for i, r in enumerate(raw) if r.payload_hi > present), None)
        if culprit is None:
            # either the checksum was cut off or a damaged record claims too much
            for i, r in enumerate(raw):
                if r.payload_hi > payload_len and not record_intact(i):
                    raise ChecksumError("tensor checksum mismatch", tensor=r.name, record=i)
            raise TruncatedError("truncated archive checksum")
        raise TruncatedError(
            f"truncated payload: needs bytes up to {need}, {max(present, 0)} present",
            tensor=raw[culprit].name, record=culprit)
    records = []
    for i, r in enumerate(raw):
        if not record_intact(i):
            raise ChecksumError("tensor checksum mismatch", tensor=r.name, record=i)
        payload = data[payload_start + r.payload_lo:payload_start + r.payload_hi]
        records.append(TensorRecord(r.name, r.shape, r.params, r.block_size, r.codebook,
                                    r.segments, payload, r.checksum))

    # cross-record and header consistency; intact records make these header faults
    position = 0
    for r in raw:
        if r.payload_lo != position:
            raise FormatError("payload regions overlap or leave gaps")
        position = r.payload_hi
        if target and any(s.element_count != target for s in r.segments[:-1]):
            raise FormatError(f"segment sizes disagree with target_elements {target}")
    if payload_len > position:
        raise FormatError(f"{payload_len - position} unaccounted bytes after the payload")
    if check_archive_checksum:
        (archive_checksum,) = struct.unpack_from("<Q", data, len(data) - 8)
        if xxh64(data[:-8]) != archive_checksum:
            raise ChecksumError("archive checksum mismatch")
    names = [r.name for r in records]
    if len(set(names)) != len(names):
        raise FormatError("duplicate tensor name")
    return ModelArchive(version, model_name, bits, "block" if block else "tensor", seed,
                        target or None, tuple(records),
                        struct.unpack_from("<Q", data, len(data) - 8)[0], tuple(spans),
                        (payload_start, payload_start + position), len(data))


def _plausible_counts(data: bytes, bits: int, block: bool) -> list[int]:
    """Record counts at which the record table and payload exactly fill the file."""
    cur = _Cursor(data, _HEADER.size)
    counts, need, parsed = [], 0, 0
    while cur.pos < len(data):
        try:
            r = _read_record(cur, bits, block)
        except CorruptDataError:
            break
        parsed += 1
        need = max(need, r.payload_hi)
        if cur.pos + need + 8 == len(data):
            counts.append(parsed)
    return counts


def _header_is_damaged(data: bytes, header: tuple) -> bool:
    """Would the file be valid with a different block flag or tensor count?"""
    magic, version, bits, flags, count, seed, target = header
    candidates = [(flags ^ FLAG_BLOCK, count)]
    candidates += [(flags, k) for k in _plausible_counts(data, bits, bool(flags & FLAG_BLOCK))
                   if k != count]
    for f, k in candidates:
        try:
            _parse(data, (magic, version, bits, f, k, seed, target), "", False)
        except CorruptDataError:
            continue
        return True
    return False


def read_archive_bytes(data: bytes, model_name: str = "model") -> ModelArchive:
    """Parse and fully verify an archive held in memory.

    Errors caused by one tensor's bytes (its record or its payload) carry
    that tensor's name and record index.  Damage to the shared file header
    or the trailing archive checksum is reported without a tensor.
    """
    data = bytes(data)
    header = _read_header(data)
    try:
        return _parse(data, header, model_name)
    except CorruptDataError as exc:
        if exc.record is not None and _header_is_damaged(data, header):
            raise FormatError("archive header is inconsistent with its tensor records") from None
        raise


def read_archive(path: str | os.PathLike) -> ModelArchive:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise ValidationError(f"archive not found: {path}") from None
    return read_archive_bytes(data, path.stem)


# -- statistics ---------------------------------------------------------------

@dataclass
class TensorStats:
    name: str
    elements: int
    bits: int
    scheme: str
    granularity: str
    segments: int
    code_bits: int       # sum of codeword lengths
    payload_bytes: int   # including per-segment padding
    header_bytes: int    # the tensor's record in the archive header
    codebook_max_length: int

    @property
    def average_code_length(self) -> float:
        return self.code_bits / self.elements

    @property
    def effective_bits(self) -> float:
        return 8 * self.payload_bytes / self.elements

    @property
    def bits_saved(self) -> float:
        return self.bits - self.effective_bits

    @property
    def effective_bits_with_headers(self) -> float:
        return 8 * (self.payload_bytes + self.header_bytes) / self.elements

    @property
    def compression_ratio_fp16(self) -> float:
        return 16 / self.effective_bits_with_headers

    @property
    def header_overhead(self) -> float:
        return self.header_bytes / (self.header_bytes + self.payload_bytes)

    def as_dict(self) -> dict:
        return {
            "name": self.name, "elements": self.elements, "bits": self.bits,
            "scheme": self.scheme, "granularity": self.granularity,
            "segments": self.segments, "max_code_length": self.codebook_max_length,
            "average_code_length": self.average_code_length,
            "effective_bits": self.effective_bits, "bits_saved": self.bits_saved,
            "compression_ratio_fp16": self.compression_ratio_fp16,
            "header_overhead": self.header_overhead,
            "payload_bytes": self.payload_bytes, "header_bytes": self.header_bytes,
        }


@dataclass
class ArchiveStats:
    model_name: str
    bits: int
    granularity: str
    tensors: list[TensorStats]
    file_bytes: int

    @property
    def elements(self) -> int:
        return sum(t.elements for t in self.tensors)

    @property
    def payload_bytes(self) -> int:
        return sum(t.payload_bytes for t in self.tensors)

    @property
    def header_bytes(self) -> int:
        return self.file_bytes - self.payload_bytes

    @property
    def effective_bits(self) -> float:
        """Parameter-weighted payload bits per element, padding included."""
        return 8 * self.payload_bytes / self.elements

    @property
    def bits_saved(self) -> float:
        return self.bits - self.effective_bits

    @property
    def mean_tensor_bits_saved(self) -> float:
        """Unweighted mean over tensors."""
        return sum(t.bits_saved for t in self.tensors) / len(self.tensors)

    @property
    def average_code_length(self) -> float:
        return sum(t.code_bits for t in self.tensors) / self.elements

    @property
    def compression_ratio_fp16(self) -> float:
        return 16 * self.elements / (8 * self.file_bytes)

    @property
    def header_overhead(self) -> float:
        return self.header_bytes / self.file_bytes

    def as_dict(self) -> dict:
        return {
            "model_name": self.model_name, "bits": self.bits, "granularity": self.granularity,
            "tensors": len(self.tensors), "elements": self.elements,
            "file_bytes": self.file_bytes, "payload_bytes": self.payload_bytes,
            "header_bytes": self.header_bytes,
            "average_code_length": self.average_code_length,
            "effective_bits": self.effective_bits, "bits_saved": self.bits_saved,
            "mean_tensor_bits_saved": self.mean_tensor_bits_saved,
            "compression_ratio_fp16": self.compression_ratio_fp16,
            "header_overhead": self.header_overhead,
        }


def archive_stats(archive: ModelArchive) -> ArchiveStats:
    tensors = []
    for rec, (start, end) in zip(archive.records, archive.record_spans):
        tensors.append(TensorStats(
            rec.name, rec.size, archive.bits, rec.params[0].scheme, archive.granularity,
            len(rec.segments), sum(s.bit_length for s in rec.segments), len(rec.payload),
            end - start, rec.codebook.max_length))
    return ArchiveStats(archive.model_name, archive.bits, archive.granularity, tensors,
                        archive.file_size)

