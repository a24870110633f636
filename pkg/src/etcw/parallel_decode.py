"""Segmented encoding and multi-threaded decoding.

Each tensor's codes are split into runs of ``target_elements`` symbols.
Every run is encoded on its own, starting at a byte boundary, so a worker
can decode it knowing only its bit range and element range.  Workers own
disjoint slices of the output arrays and share nothing mutable, so the
output path takes no locks; ``check_disjoint`` enforces the precondition
before any worker starts.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import DecodeError, ValidationError
from .huffman import (Bitstream, HuffmanCodebook, _check_codes, decode_into,
                      raise_for_status)

DEFAULT_TARGET_ELEMENTS = 65536


@dataclass(frozen=True)
class Segment:
    tensor_name: str
    segment_index: int
    element_offset: int
    element_count: int
    bit_offset: int
    bit_length: int

    @property
    def key(self) -> tuple[str, int]:
        return self.tensor_name, self.segment_index

    @property
    def byte_offset(self) -> int:
        return self.bit_offset // 8

    @property
    def byte_length(self) -> int:
        return (self.bit_length + 7) // 8


@dataclass(frozen=True)
class EncodedTensor:
    name: str
    bitstream: Bitstream
    segments: tuple[Segment, ...]
    codebook: HuffmanCodebook

    @property
    def size(self) -> int:
        return sum(s.element_count for s in self.segments)

    @property
    def encoded_bits(self) -> int:
        """Codeword bits, excluding inter-segment padding."""
        return sum(s.bit_length for s in self.segments)


def segment_bounds(n: int, target_elements: int | None) -> np.ndarray:
    """Element boundaries ``[0, t, 2t, ..., n]``; ``None``/0 means one segment."""
    if target_elements is None or target_elements == 0:
        return np.array([0, n], dtype=np.int64)
    if target_elements < 1:
        raise ValidationError(f"target_elements must be at least 1, got {target_elements}")
    return np.append(np.arange(0, n, target_elements, dtype=np.int64), n)


def segment_tensor(codes, book: HuffmanCodebook, target_elements: int | None = DEFAULT_TARGET_ELEMENTS,
                   *, name: str = "", backend: str | None = None) -> tuple[Bitstream, list[Segment]]:
    codes = np.ascontiguousarray(codes, dtype=np.uint8).reshape(-1)
    if codes.size == 0:
        raise ValidationError("cannot segment an empty tensor", tensor=name or None)
    _check_codes(codes, book)
    bounds = segment_bounds(codes.size, target_elements)

    words, lens = book.encode_arrays
    code_bits = lens[codes].astype(np.int64)
    seg_bits = np.add.reduceat(code_bits, bounds[:-1])
    seg_bytes = (seg_bits + 7) // 8
    byte_offsets = np.concatenate([[0], np.cumsum(seg_bytes)[:-1]]).astype(np.int64)

    out = np.zeros(int(seg_bytes.sum()), dtype=np.uint8)
    _kernels.get_backend(backend).encode_segments(codes, words, lens, bounds, byte_offsets, out)

    segments = [
        Segment(name, k, int(bounds[k]), int(bounds[k + 1] - bounds[k]),
                int(8 * byte_offsets[k]), int(seg_bits[k]))
        for k in range(len(seg_bits))
    ]
    last = segments[-1]
    return Bitstream(out.tobytes(), last.bit_offset + last.bit_length), segments


def encode_tensor(name: str, codes, book: HuffmanCodebook,
                  target_elements: int | None = DEFAULT_TARGET_ELEMENTS,
                  backend: str | None = None) -> EncodedTensor:
    bs, segments = segment_tensor(codes, book, target_elements, name=name, backend=backend)
    return EncodedTensor(name, bs, tuple(segments), book)


@dataclass(frozen=True)
class DecodePlan:
    segments: tuple[Segment, ...]
    assignment: tuple[tuple[Segment, ...], ...]
    worker_count: int
    shuffle_seed: int

    def per_worker_elements(self) -> list[int]:
        return [sum(s.element_count for s in work) for work in self.assignment]

    def imbalance(self) -> float:
        """max/min per-worker element count (inf when a worker is idle)."""
        loads = self.per_worker_elements()
        return max(loads) / min(loads) if min(loads) else float("inf")


def build_plan(segments: Sequence[Segment], worker_count: int, shuffle_seed: int = 0) -> DecodePlan:
    """Shuffle segments with a seeded permutation, then deal them round-robin."""
    if worker_count < 1:
        raise ValidationError(f"worker_count must be at least 1, got {worker_count}")
    segments = tuple(segments)
    order = np.random.default_rng(shuffle_seed).permutation(len(segments))
    shuffled = [segments[i] for i in order]
    assignment = tuple(tuple(shuffled[w::worker_count]) for w in range(worker_count))
    return DecodePlan(segments, assignment, worker_count, shuffle_seed)


def all_segments(tensors: Iterable[EncodedTensor]) -> list[Segment]:
    return [s for t in tensors for s in t.segments]


def check_disjoint(tensor: EncodedTensor) -> None:
    """Segments must tile ``[0, size)`` in element space and be ordered,
    non-overlapping ranges inside the payload in bit space."""
    expected_elem = 0
    bit_floor = 0
    for k, seg in enumerate(tensor.segments):
        if seg.segment_index != k or seg.tensor_name != tensor.name:
            raise ValidationError("segment table out of order", tensor=tensor.name, segment=k)
        if seg.element_offset != expected_elem or seg.element_count < 1:
            raise ValidationError("segments do not tile the element range",
                                  tensor=tensor.name, segment=k)
        if seg.bit_offset % 8 or seg.bit_offset < bit_floor:
            raise ValidationError("segment bit ranges overlap or are unaligned",
                                  tensor=tensor.name, segment=k)
        expected_elem += seg.element_count
        bit_floor = seg.bit_offset + seg.bit_length
    if bit_floor > tensor.bitstream.bit_length:
        raise ValidationError("segment runs past the end of the bitstream", tensor=tensor.name)


def default_workers() -> int:
    env = os.environ.get("ETCW_WORKERS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValidationError(f"ETCW_WORKERS must be an integer, got {env!r}") from None
        if value < 1:
            raise ValidationError(f"ETCW_WORKERS must be at least 1, got {value}")
        return value
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _decode_one(job, seg: Segment, kern) -> DecodeError | None:
    tensor, payload, out = job
    status, decoded = decode_into(payload, seg.bit_offset, seg.bit_length, seg.element_count,
                                  tensor.codebook, out, seg.element_offset, backend=kern)
    try:
        raise_for_status(status, decoded, seg.element_count,
                         tensor=seg.tensor_name, segment=seg.segment_index)
    except DecodeError as exc:
        return exc
    return None


def decode_parallel(tensors: Sequence[EncodedTensor], plan: DecodePlan, *,
                    backend: str | None = None) -> dict[str, np.ndarray]:
    """Decode every tensor's codes with ``plan.worker_count`` threads.

    Output equals per-tensor ``decode_serial`` for any worker count and
    shuffle seed.  Failing segments do not stop the others; once all
    workers join, the first failure in (tensor, segment) order is raised
    with the full list attached as ``.failures``.
    """
    by_name = {t.name: t for t in tensors}
    if len(by_name) != len(tensors):
        raise ValidationError("duplicate tensor names")
    planned = {s.key: s for s in plan.segments}
    given = {s.key: s for s in all_segments(tensors)}
    if planned != given:
        raise ValidationError("decode plan does not match the tensors' segments")
    dealt = [s.key for work in plan.assignment for s in work]
    if len(dealt) != len(planned) or set(dealt) != set(planned):
        raise ValidationError("decode plan assigns a segment zero or several times")
    for t in tensors:
        check_disjoint(t)

    kern = _kernels.get_backend(backend)
    for t in tensors:
        t.codebook.decode_tables  # build tables before threads share the codebook
    jobs = {
        t.name: (t, np.frombuffer(t.bitstream.payload, dtype=np.uint8),
                 np.empty(t.size, dtype=np.uint8))
        for t in tensors
    }

    def run(work: Sequence[Segment]) -> list[DecodeError]:
        failures = []
        for seg in work:
            err = _decode_one(jobs[seg.tensor_name], seg, kern)
            if err is not None:
                failures.append(err)
        return failures

    if plan.worker_count == 1:
        failures = run(plan.assignment[0])
    else:
        with ThreadPoolExecutor(max_workers=plan.worker_count) as pool:
            failures = [f for fs in pool.map(run, plan.assignment) for f in fs]

    if failures:
        order = {t.name: i for i, t in enumerate(tensors)}
        failures.sort(key=lambda e: (order[e.tensor], e.segment))
        first = failures[0]
        first.failures = failures
        raise first
    return {name: out for name, (_, _, out) in jobs.items()}


def decode_all_serial(tensors: Sequence[EncodedTensor], *,
                      backend: str | None = None) -> dict[str, np.ndarray]:
    """Single-threaded reference: every segment of every tensor, in order."""
    kern = _kernels.get_backend(backend)
    result = {}
    for t in tensors:
        out = np.empty(t.size, dtype=np.uint8)
        job = (t, np.frombuffer(t.bitstream.payload, dtype=np.uint8), out)
        for seg in t.segments:
            err = _decode_one(job, seg, kern)
            if err is not None:
                raise err
        result[t.name] = out
    return result
