import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etcw.errors import DecodeError, ValidationError
from etcw.huffman import (Bitstream, HuffmanCodebook, SymbolHistogram, average_code_length,
                          bits_saved, build_codebook, build_histogram, decode_serial, encode,
                          histogram_from_counts, shannon_entropy)
from etcw.quantizer import quantize_tensor
from etcw.tensor_store import generate_synthetic
from helpers import brute_force_min_cost, feasible_lengths, tensor


def book_for(lengths: dict, bits=4):
    full = [0] * (1 << bits)
    for s, n in lengths.items():
        full[s] = n
    return HuffmanCodebook(bits, tuple(full))


# -- histograms ----------------------------------------------------------------

def test_histogram_counts():
    from etcw.quantizer import QuantParams, QuantTensor
    p = QuantParams("unsigned", 4, 1.0)
    qt = QuantTensor("t", (3,), (p,), np.array([0, 0, 1], dtype=np.uint8))
    hist = build_histogram(qt)
    assert hist.counts[0] == 2 and hist.counts[1] == 1 and hist.counts[2:].sum() == 0
    assert hist.total == 3 and hist.present == 2


def test_histogram_uniform_and_constant():
    from etcw.quantizer import QuantParams, QuantTensor
    p = QuantParams("unsigned", 4, 1.0)
    codes = np.tile(np.arange(16, dtype=np.uint8), 100)
    hist = build_histogram(QuantTensor("u", (1600,), (p,), codes))
    assert hist.counts.tolist() == [100] * 16
    const = build_histogram(quantize_tensor(tensor([3.0] * 50), 8))
    assert const.present == 1 and const.counts[0] == 50


def test_histogram_validation():
    with pytest.raises(ValidationError):
        SymbolHistogram(4, np.zeros(16))
    with pytest.raises(ValidationError):
        SymbolHistogram(4, np.ones(8))
    with pytest.raises(ValidationError):
        SymbolHistogram(4, -np.ones(16))


def test_entropy_values():
    assert shannon_entropy(histogram_from_counts([100] * 16)) == 4.0
    assert shannon_entropy(histogram_from_counts([7] + [0] * 15)) == 0.0
    h = shannon_entropy(histogram_from_counts({0: 5, 1: 2, 2: 1, 3: 1}))
    assert h == pytest.approx(1.6577, abs=1e-4)


# -- codebooks -----------------------------------------------------------------

def test_textbook_three_symbols():
    hist = histogram_from_counts({0: 2, 1: 1, 2: 1})
    book = build_codebook(hist)
    assert book.lengths[:3] == (1, 2, 2)
    assert average_code_length(book, hist) == 1.5


def test_single_symbol_gets_one_bit():
    book = build_codebook(histogram_from_counts({9: 40}))
    assert book.lengths[9] == 1 and sum(book.lengths) == 1
    assert book.codeword_str(9) == "0"


def test_four_symbol_example_is_optimal():
    hist = histogram_from_counts({0: 5, 1: 2, 2: 1, 3: 1})
    book = build_codebook(hist)
    assert book.lengths[:4] == (1, 2, 3, 3)
    avg = average_code_length(book, hist)
    assert avg == pytest.approx(15 / 9)
    assert round(avg, 3) == 1.667 and round(shannon_entropy(hist), 3) == 1.658
    assert avg * hist.total == brute_force_min_cost([5, 2, 1, 1])


def test_uniform_sixteen_is_incompressible():
    hist = histogram_from_counts([10] * 16)
    book = build_codebook(hist)
    assert average_code_length(book, hist) == 4.0
    assert bits_saved(book, hist) == 0.0


def test_canonical_codewords():
    book = book_for({0: 1, 1: 2, 2: 3, 3: 3})
    assert [book.codeword_str(s) for s in range(4)] == ["0", "10", "110", "111"]
    assert book.is_prefix_free()
    assert book.kraft_sum() == 1.0


def test_tie_breaking_is_deterministic():
    hist = histogram_from_counts([1] * 5)
    assert build_codebook(hist) == build_codebook(hist)
    assert build_codebook(hist).lengths[:5] == (3, 3, 2, 2, 2)


@pytest.mark.parametrize("lengths", [
    {0: 1, 1: 1, 2: 1},     # over-full
    {0: 1, 1: 2},           # incomplete
    {0: 2},                 # lone symbol not length 1
    {},
])
def test_invalid_codebooks(lengths):
    with pytest.raises(ValidationError):
        book_for(lengths)


def test_codebook_serialization_roundtrip():
    book = build_codebook(histogram_from_counts({0: 9, 3: 4, 7: 1, 200: 2}, bits=8))
    assert HuffmanCodebook.from_bytes(8, book.to_bytes()) == book


def test_average_length_requires_codeword():
    book = book_for({0: 1, 1: 1})
    with pytest.raises(ValidationError, match="no codeword"):
        average_code_length(book, histogram_from_counts({0: 1, 2: 1}))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=16, max_size=16).filter(any))
def test_codebook_properties(counts):
    hist = histogram_from_counts(counts)
    book = build_codebook(hist)
    assert book.is_prefix_free()
    present = [s for s, c in enumerate(counts) if c]
    assert book.present_symbols == present
    if len(present) >= 2:
        assert book.kraft_sum() == 1.0
        h = shannon_entropy(hist)
        avg = average_code_length(book, hist)
        assert h <= avg < h + 1


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(1, 1000), min_size=2, max_size=6))
def test_optimal_against_brute_force(counts):
    book = build_codebook(histogram_from_counts(counts, bits=4))
    cost = sum(c * n for c, n in zip(counts, book.lengths))
    assert cost == brute_force_min_cost(counts)


def test_oracle_enumeration_is_complete():
    # every complete code on 3 symbols is a permutation of (1, 2, 2)
    rows = {tuple(r) for r in feasible_lengths(3)}
    assert {(1, 2, 2), (2, 1, 2), (2, 2, 1)} <= rows
    assert all(sum(2.0 ** -n for n in r) <= 1 for r in rows)
    assert len(rows) == len(list(itertools.product([1, 2], repeat=3))) - 4


# -- encode / decode -------------------------------------------------------------

def test_encode_example():
    book = book_for({0: 1, 1: 2, 2: 2})
    bs = encode([0, 0, 1], book)
    assert bs.bit_length == 4 and bs.bits() == "0010"
    assert bs.payload == bytes([0b00100000])


def test_encode_empty():
    bs = encode([], book_for({0: 1, 1: 1}))
    assert bs.bit_length == 0 and bs.payload == b""
    assert decode_serial(bs, book_for({0: 1, 1: 1}), 0).size == 0


def test_encode_rejects_absent_symbol():
    with pytest.raises(ValidationError, match="absent"):
        encode([0, 5], book_for({0: 1, 1: 1}))


def test_bitstream_validation():
    with pytest.raises(ValidationError):
        Bitstream(b"\x00\x00", 4)
    with pytest.raises(ValidationError, match="padding"):
        Bitstream(b"\x01", 4)


def roundtrip_case(seed, n, bits=4):
    rng = np.random.default_rng(seed)
    codes = np.clip(rng.normal(1 << (bits - 1), 2, n).round(), 0, (1 << bits) - 1).astype(np.uint8)
    book = build_codebook(SymbolHistogram(bits, np.bincount(codes, minlength=1 << bits)))
    return codes, book


def test_truncated_stream_is_exhausted(backend):
    codes, book = roundtrip_case(0, 500)
    bs = encode(codes, book)
    # drop the last bit (clear it so the padding stays zero)
    cut = bs.bit_length - 1
    payload = bytearray(bs.payload[:(cut + 7) // 8])
    if cut % 8:
        payload[-1] &= (0xFF << (8 - cut % 8)) & 0xFF
    with pytest.raises(DecodeError) as exc:
        decode_serial(Bitstream(bytes(payload), cut), book, codes.size, backend=backend)
    assert exc.value.reason == "exhausted"


def test_trailing_bits_detected(backend):
    codes, book = roundtrip_case(1, 300)
    bs = encode(codes, book)
    with pytest.raises(DecodeError) as exc:
        decode_serial(bs, book, codes.size - 1, backend=backend)
    assert exc.value.reason == "trailing"


def test_invalid_prefix_detected(backend):
    # lengths 1, 2, 3 leave the codeword 111 unused
    book = HuffmanCodebook.__new__(HuffmanCodebook)
    object.__setattr__(book, "bits", 4)
    object.__setattr__(book, "lengths", (1, 2, 3) + (0,) * 13)
    bs = Bitstream(bytes([0b11100000]), 3)
    with pytest.raises(DecodeError) as exc:
        decode_serial(bs, book, 1, backend=backend)
    assert exc.value.reason == "invalid"


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 255), min_size=1, max_size=2000))
def test_roundtrip_property(symbols):
    codes = np.array(symbols, dtype=np.uint8)
    book = build_codebook(SymbolHistogram(8, np.bincount(codes, minlength=256)))
    bs = encode(codes, book)
    assert np.array_equal(decode_serial(bs, book, codes.size), codes)
    assert np.array_equal(decode_serial(bs, book, codes.size, backend="numpy"), codes)


def test_million_gaussian_codes_roundtrip():
    [g] = generate_synthetic([("g", (1_000_000,), "gaussian(0,0.02)")], seed=5)
    qt = quantize_tensor(g, 4)
    hist = build_histogram(qt)
    book = build_codebook(hist)
    bs = encode(qt.codes, book)
    assert np.array_equal(decode_serial(bs, book, qt.size), qt.codes)
    assert bs.bit_length / qt.size == average_code_length(book, hist)
    h = shannon_entropy(hist)
    assert h < 4 and h <= bs.bit_length / qt.size < h + 1


def test_long_codes_skip_lookup_table(backend):
    # Fibonacci-like counts force codewords longer than the 11-bit table
    fib = [1, 1]
    for _ in range(14):
        fib.append(fib[-1] + fib[-2])
    hist = SymbolHistogram(4, np.array(fib))
    book = build_codebook(hist)
    assert book.max_length == 15
    rng = np.random.default_rng(3)
    codes = rng.choice(16, size=5000, p=np.array(fib) / sum(fib)).astype(np.uint8)
    codes[:16] = np.arange(16)
    bs = encode(codes, book, backend=backend)
    assert np.array_equal(decode_serial(bs, book, codes.size, backend=backend), codes)
    assert math.isclose(sum(2.0 ** -n for n in book.lengths if n), 1.0)
