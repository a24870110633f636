"""Canonical Huffman coding over the 2^b integer codes of one tensor.

A codebook is fully described by its per-symbol code lengths; codewords
are assigned canonically in (length, symbol) order.  Bitstreams are packed
MSB-first and padded with zero bits to a byte boundary.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import _kernels
from ._kernels import MAX_KERNEL_CODE_LENGTH, STATUS_NAMES
from .errors import DecodeError, ValidationError
from .quantizer import SUPPORTED_BITS, QuantTensor

LUT_BITS = 11


@dataclass(frozen=True, eq=False)
class SymbolHistogram:
    bits: int
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if counts.size != 1 << self.bits:
            raise ValidationError(f"histogram needs {1 << self.bits} bins, got {counts.size}")
        if (counts < 0).any():
            raise ValidationError("negative symbol count")
        if not counts.any():
            raise ValidationError("histogram has no symbols")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def present(self) -> int:
        return int(np.count_nonzero(self.counts))

    def __eq__(self, other):
        if not isinstance(other, SymbolHistogram):
            return NotImplemented
        return self.bits == other.bits and np.array_equal(self.counts, other.counts)


def histogram_from_counts(counts, bits: int | None = None) -> SymbolHistogram:
    """Histogram from a ``{symbol: count}`` mapping or a dense count list."""
    if isinstance(counts, dict):
        if bits is None:
            bits = 4 if max(counts) < 16 else 8
        dense = np.zeros(1 << bits, dtype=np.int64)
        for sym, c in counts.items():
            dense[sym] = c
        return SymbolHistogram(bits, dense)
    counts = np.asarray(counts, dtype=np.int64)
    if bits is None:
        bits = 4 if counts.size <= 16 else 8
    if counts.size > 1 << bits:
        raise ValidationError(f"{counts.size} counts do not fit a {bits}-bit alphabet")
    dense = np.zeros(1 << bits, dtype=np.int64)
    dense[:counts.size] = counts
    return SymbolHistogram(bits, dense)


def build_histogram(qt: QuantTensor) -> SymbolHistogram:
    if qt.size == 0:
        raise ValidationError("empty tensor", tensor=qt.name)
    return SymbolHistogram(qt.bits, np.bincount(qt.codes, minlength=1 << qt.bits))


def shannon_entropy(hist: SymbolHistogram) -> float:
    """Entropy of the empirical symbol distribution, in bits per symbol."""
    counts = hist.counts[hist.counts > 0].astype(np.float64)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum()) + 0.0


class DecodeTables(NamedTuple):
    lut_sym: np.ndarray
    lut_len: np.ndarray
    lut_bits: int
    count: np.ndarray
    first_code: np.ndarray
    first_index: np.ndarray
    sorted_syms: np.ndarray
    max_len: int


@dataclass(frozen=True)
class HuffmanCodebook:
    """Per-symbol code lengths (0 = symbol absent) of a canonical prefix code."""

    bits: int
    lengths: tuple[int, ...]

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise ValidationError(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")
        lengths = tuple(int(n) for n in self.lengths)
        if len(lengths) != 1 << self.bits:
            raise ValidationError(f"codebook needs {1 << self.bits} lengths, got {len(lengths)}")
        if any(n < 0 or n > 255 for n in lengths):
            raise ValidationError("code lengths must lie in [0, 255]")
        object.__setattr__(self, "lengths", lengths)
        self._check_kraft()

    def _check_kraft(self):
        present = [n for n in self.lengths if n]
        if not present:
            raise ValidationError("codebook has no symbols")
        if len(present) == 1:
            if present[0] != 1:
                raise ValidationError("a lone symbol must have code length 1")
            return
        top = max(present)
        if sum(1 << (top - n) for n in present) != 1 << top:
            raise ValidationError("code lengths violate Kraft equality")

    @classmethod
    def from_bytes(cls, bits: int, data: bytes) -> "HuffmanCodebook":
        return cls(bits, tuple(data))

    def to_bytes(self) -> bytes:
        return bytes(self.lengths)

    @property
    def max_length(self) -> int:
        return max(self.lengths)

    @property
    def present_symbols(self) -> list[int]:
        return [s for s, n in enumerate(self.lengths) if n]

    def kraft_sum(self) -> float:
        return sum(2.0 ** -n for n in self.lengths if n)

    @cached_property
    def codewords(self) -> dict[int, int]:
        """Canonical codeword of each present symbol."""
        order = sorted(self.present_symbols, key=lambda s: (self.lengths[s], s))
        words = {}
        code, prev = 0, self.lengths[order[0]]
        for i, sym in enumerate(order):
            n = self.lengths[sym]
            if i:
                code = (code + 1) << (n - prev)
            words[sym] = code
            prev = n
        return words

    def codeword_str(self, symbol: int) -> str:
        return format(self.codewords[symbol], f"0{self.lengths[symbol]}b")

    @cached_property
    def encode_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        words = np.zeros(1 << self.bits, dtype=np.uint64)
        for sym, w in self.codewords.items():
            words[sym] = w
        return words, np.array(self.lengths, dtype=np.uint8)

    @cached_property
    def decode_tables(self) -> DecodeTables:
        if self.max_length > MAX_KERNEL_CODE_LENGTH:
            raise ValidationError(
                f"code length {self.max_length} exceeds the {MAX_KERNEL_CODE_LENGTH}-bit limit")
        max_len = self.max_length
        order = sorted(self.present_symbols, key=lambda s: (self.lengths[s], s))
        count = np.zeros(max_len + 1, dtype=np.int64)
        for sym in order:
            count[self.lengths[sym]] += 1
        first_code = np.zeros(max_len + 1, dtype=np.int64)
        first_index = np.zeros(max_len + 1, dtype=np.int64)
        code = index = 0
        for n in range(1, max_len + 1):
            first_code[n] = code
            first_index[n] = index
            code = (code + count[n]) << 1
            index += count[n]

        lut_bits = min(max_len, LUT_BITS)
        lut_sym = np.zeros(1 << lut_bits, dtype=np.uint8)
        lut_len = np.zeros(1 << lut_bits, dtype=np.uint8)
        for sym, word in self.codewords.items():
            n = self.lengths[sym]
            if n <= lut_bits:
                lo = word << (lut_bits - n)
                hi = (word + 1) << (lut_bits - n)
                lut_sym[lo:hi] = sym
                lut_len[lo:hi] = n
        return DecodeTables(lut_sym, lut_len, lut_bits, count, first_code, first_index,
                            np.array(order, dtype=np.uint8), max_len)

    def is_prefix_free(self) -> bool:
        strings = sorted(self.codeword_str(s) for s in self.present_symbols)
        return not any(b.startswith(a) for a, b in zip(strings, strings[1:]))


def build_codebook(hist: SymbolHistogram) -> HuffmanCodebook:
    """Huffman code lengths for ``hist``.

    Merges always take the two lightest nodes.  Equal weights are ordered
    leaves before merged nodes, leaves by symbol value and merged nodes by
    creation order, so the result is deterministic.
    """
    present = [int(s) for s in np.flatnonzero(hist.counts)]
    lengths = [0] * (1 << hist.bits)
    if len(present) == 1:
        lengths[present[0]] = 1
        return HuffmanCodebook(hist.bits, tuple(lengths))

    heap = [(int(hist.counts[s]), 0, s, [s]) for s in present]
    heapq.heapify(heap)
    created = 0
    while len(heap) > 1:
        w1, _, _, members1 = heapq.heappop(heap)
        w2, _, _, members2 = heapq.heappop(heap)
        members = members1 + members2
        for s in members:
            lengths[s] += 1
        heapq.heappush(heap, (w1 + w2, 1, created, members))
        created += 1
    return HuffmanCodebook(hist.bits, tuple(lengths))


def average_code_length(book: HuffmanCodebook, hist: SymbolHistogram) -> float:
    """Mean encoded bits per symbol: the effective bit-width of the tensor."""
    lengths = np.array(book.lengths, dtype=np.int64)
    if ((hist.counts > 0) & (lengths == 0)).any():
        missing = int(np.flatnonzero((hist.counts > 0) & (lengths == 0))[0])
        raise ValidationError(f"symbol {missing} occurs but has no codeword")
    return float((hist.counts * lengths).sum()) / hist.total


def bits_saved(book: HuffmanCodebook, hist: SymbolHistogram) -> float:
    return book.bits - average_code_length(book, hist)


@dataclass(frozen=True)
class Bitstream:
    payload: bytes
    bit_length: int

    def __post_init__(self):
        payload = bytes(self.payload)
        nbytes = (self.bit_length + 7) // 8
        if self.bit_length < 0 or len(payload) != nbytes:
            raise ValidationError(
                f"{len(payload)} payload bytes cannot hold exactly {self.bit_length} bits")
        pad = 8 * nbytes - self.bit_length
        if pad and payload[-1] & ((1 << pad) - 1):
            raise ValidationError("non-zero padding bits")
        object.__setattr__(self, "payload", payload)

    def bits(self) -> str:
        return "".join(format(b, "08b") for b in self.payload)[:self.bit_length]


def _check_codes(codes: np.ndarray, book: HuffmanCodebook) -> None:
    if codes.size == 0:
        return
    if int(codes.max()) >= 1 << book.bits:
        raise ValidationError(f"code {int(codes.max())} outside the {book.bits}-bit alphabet")
    _, lens = book.encode_arrays
    absent = lens[codes] == 0
    if absent.any():
        raise ValidationError(f"code {int(codes[np.argmax(absent)])} is absent from the codebook")
    if book.max_length > MAX_KERNEL_CODE_LENGTH:
        raise ValidationError(
            f"code length {book.max_length} exceeds the {MAX_KERNEL_CODE_LENGTH}-bit limit")


def encoded_bit_length(codes, book: HuffmanCodebook) -> int:
    _, lens = book.encode_arrays
    return int(lens[np.asarray(codes, dtype=np.uint8)].astype(np.int64).sum())


def encode(codes, book: HuffmanCodebook, *, backend: str | None = None) -> Bitstream:
    codes = np.ascontiguousarray(codes, dtype=np.uint8).reshape(-1)
    _check_codes(codes, book)
    bit_length = encoded_bit_length(codes, book)
    out = np.zeros((bit_length + 7) // 8, dtype=np.uint8)
    if codes.size:
        words, lens = book.encode_arrays
        _kernels.get_backend(backend).encode_segments(
            codes, words, lens, np.array([0, codes.size], dtype=np.int64),
            np.zeros(1, dtype=np.int64), out)
    return Bitstream(out.tobytes(), bit_length)


def raise_for_status(status: int, decoded: int, expected: int, *,
                     tensor: str | None = None, segment: int | None = None) -> None:
    if status == _kernels.OK:
        return
    reason = STATUS_NAMES[status]
    messages = {
        "exhausted": f"bitstream exhausted after {decoded} of {expected} symbols",
        "trailing": f"bits remain after decoding all {expected} symbols",
        "invalid": f"invalid prefix at symbol {decoded}",
    }
    raise DecodeError(messages[reason], reason=reason, tensor=tensor, segment=segment)


def decode_into(payload: np.ndarray, bit_start: int, bit_length: int, n: int,
                book: HuffmanCodebook, out: np.ndarray, out_start: int = 0, *,
                backend=None) -> tuple[int, int]:
    """Run the decode kernel on one bit range; returns (status, symbols decoded)."""
    kern = backend if hasattr(backend, "decode_segment") else _kernels.get_backend(backend)
    t = book.decode_tables
    status, decoded, _ = kern.decode_segment(
        payload, bit_start, bit_length, n, out, out_start,
        t.lut_sym, t.lut_len, t.lut_bits, t.count, t.first_code, t.first_index,
        t.sorted_syms, t.max_len)
    return int(status), int(decoded)


def decode_serial(bs: Bitstream, book: HuffmanCodebook, n: int, *,
                  backend: str | None = None) -> np.ndarray:
    """Decode exactly ``n`` symbols, consuming exactly ``bs.bit_length`` bits."""
    out = np.empty(n, dtype=np.uint8)
    payload = np.frombuffer(bs.payload, dtype=np.uint8)
    status, decoded = decode_into(payload, 0, bs.bit_length, n, book, out, backend=backend)
    raise_for_status(status, decoded, n)
    return out

