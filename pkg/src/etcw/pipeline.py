"""End-to-end compress / decompress over in-memory models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .container import (ArchiveOptions, ModelArchive, TensorRecord, make_record,
                        read_archive_bytes, write_archive)
from .huffman import SymbolHistogram, build_codebook, build_histogram
from .parallel_decode import (DEFAULT_TARGET_ELEMENTS, build_plan, decode_parallel,
                              default_workers, segment_tensor)
from .quantizer import DEFAULT_BLOCK_SIZE, QuantTensor, dequantize, quantize_model
from .tensor_store import FloatTensor


@dataclass(frozen=True)
class CompressedTensor:
    quant: QuantTensor
    histogram: SymbolHistogram
    record: TensorRecord


def compress_tensors(quantized: Sequence[QuantTensor],
                     target_elements: int | None = DEFAULT_TARGET_ELEMENTS,
                     backend: str | None = None) -> list[CompressedTensor]:
    out = []
    for qt in quantized:
        hist = build_histogram(qt)
        book = build_codebook(hist)
        bs, segments = segment_tensor(qt.codes, book, target_elements, name=qt.name,
                                      backend=backend)
        out.append(CompressedTensor(qt, hist, make_record(qt, book, bs, segments)))
    return out


def compress_model(tensors: Sequence[FloatTensor], bits: int, *, scheme: str = "auto",
                   granularity: str = "tensor", block_size: int = DEFAULT_BLOCK_SIZE,
                   target_elements: int | None = DEFAULT_TARGET_ELEMENTS,
                   shuffle_seed: int = 0, backend: str | None = None
                   ) -> tuple[bytes, list[CompressedTensor]]:
    """Quantize, entropy-code and serialize ``tensors``; returns archive bytes."""
    quantized = quantize_model(tensors, bits, scheme, granularity, block_size)
    compressed = compress_tensors(quantized, target_elements, backend)
    options = ArchiveOptions(bits, granularity, shuffle_seed, target_elements)
    return write_archive([c.record for c in compressed], options), compressed


def decode_archive(archive: ModelArchive, workers: int | None = None,
                   shuffle_seed: int | None = None,
                   backend: str | None = None) -> dict[str, np.ndarray]:
    """Decoded integer codes of every tensor, keyed by name."""
    tensors = archive.encoded_tensors()
    segments = [s for t in tensors for s in t.segments]
    seed = archive.shuffle_seed if shuffle_seed is None else shuffle_seed
    plan = build_plan(segments, workers or default_workers(), seed)
    return decode_parallel(tensors, plan, backend=backend)


def decompress_archive(archive: ModelArchive, workers: int | None = None,
                       backend: str | None = None) -> list[FloatTensor]:
    codes = decode_archive(archive, workers, backend=backend)
    return [dequantize(rec.quant_tensor(codes[rec.name])) for rec in archive.records]


def decompress_bytes(data: bytes, workers: int | None = None) -> list[FloatTensor]:
    return decompress_archive(read_archive_bytes(data), workers)
