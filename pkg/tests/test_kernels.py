"""The numba kernels and the numpy fallback must agree exactly."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etcw import _kernels
from etcw.huffman import HuffmanCodebook, SymbolHistogram, build_codebook

NUMBA = _kernels.load_backend("numba")
NUMPY = _kernels.load_backend("numpy")


def run_decode(kern, payload, bit_start, bit_length, n, book):
    t = book.decode_tables
    out = np.full(n + 4, 0xEE, dtype=np.uint8)
    status, decoded, consumed = kern.decode_segment(
        payload, bit_start, bit_length, n, out, 2, t.lut_sym, t.lut_len, t.lut_bits,
        t.count, t.first_code, t.first_index, t.sorted_syms, t.max_len)
    return int(status), int(decoded), int(consumed), out


def random_book(rng, bits, skew):
    weights = rng.random(1 << bits) ** skew
    weights[rng.random(1 << bits) < 0.3] = 0
    if not weights.any():
        weights[0] = 1
    counts = np.ceil(weights / weights.max() * 10_000).astype(np.int64)
    return build_codebook(SymbolHistogram(bits, counts))


def random_codes(rng, book, n):
    present = np.array(book.present_symbols)
    p = 2.0 ** -np.array([book.lengths[s] for s in present])
    return rng.choice(present, size=n, p=p / p.sum()).astype(np.uint8)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([4, 8]), st.floats(1, 40),
       st.integers(1, 3000), st.integers(1, 700))
def test_encode_segments_identical(seed, bits, skew, n, target):
    rng = np.random.default_rng(seed)
    book = random_book(rng, bits, skew)
    codes = random_codes(rng, book, n)
    words, lens = book.encode_arrays
    bounds = np.append(np.arange(0, n, target), n).astype(np.int64)
    seg_bits = np.add.reduceat(lens[codes].astype(np.int64), bounds[:-1])
    seg_bytes = (seg_bits + 7) // 8
    offsets = np.concatenate([[0], np.cumsum(seg_bytes)[:-1]]).astype(np.int64)
    outs = []
    for kern in (NUMBA, NUMPY):
        out = np.zeros(int(seg_bytes.sum()), dtype=np.uint8)
        kern.encode_segments(codes, words, lens, bounds, offsets, out)
        outs.append(out)
    assert np.array_equal(outs[0], outs[1])

    # both decode every segment back
    for k in range(len(seg_bits)):
        n_k = int(bounds[k + 1] - bounds[k])
        for kern in (NUMBA, NUMPY):
            status, decoded, consumed, out = run_decode(
                kern, outs[0], 8 * int(offsets[k]), int(seg_bits[k]), n_k, book)
            assert (status, decoded, consumed) == (_kernels.OK, n_k, int(seg_bits[k]))
            assert np.array_equal(out[2:2 + n_k], codes[bounds[k]:bounds[k + 1]])


@settings(max_examples=400, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([4, 8]), st.floats(1, 40),
       st.binary(min_size=0, max_size=64), st.integers(0, 20), st.integers(0, 600),
       st.integers(0, 200))
def test_decode_garbage_identical(seed, bits, skew, data, start, length, n):
    """Arbitrary payloads and ranges: same status, count, bits and output."""
    rng = np.random.default_rng(seed)
    book = random_book(rng, bits, skew)
    payload = np.frombuffer(data, dtype=np.uint8)
    start = min(start, 8 * len(data))
    length = min(length, 8 * len(data) - start)
    a = run_decode(NUMBA, payload, start, length, n, book)
    b = run_decode(NUMPY, payload, start, length, n, book)
    assert a[:3] == b[:3]
    assert np.array_equal(a[3][:2 + a[1]], b[3][:2 + b[1]])
    assert a[3][0] == a[3][1] == 0xEE  # nothing written before out_start


def incomplete_book(lengths):
    # bypass Kraft validation to get a code with unassigned prefixes
    book = HuffmanCodebook.__new__(HuffmanCodebook)
    object.__setattr__(book, "bits", 4)
    object.__setattr__(book, "lengths", tuple(lengths) + (0,) * (16 - len(lengths)))
    return book


def test_incomplete_code_invalid_prefix():
    # lengths (1, 2, 3) leave 111 unassigned
    book = incomplete_book((1, 2, 3))
    payload = np.array([0b01011100, 0], dtype=np.uint8)
    for kern in (NUMBA, NUMPY):
        status, decoded, _, out = run_decode(kern, payload, 0, 16, 5, book)
        assert status == _kernels.INVALID and decoded == 2
        assert out[2:4].tolist() == [0, 1]


@settings(max_examples=300, deadline=None)
@given(st.sampled_from([(1, 2, 3), (2, 2, 3), (1, 3, 3, 14), (2, 13, 13, 13)]),
       st.binary(min_size=1, max_size=16), st.integers(0, 7), st.integers(0, 128),
       st.integers(0, 60))
def test_decode_incomplete_code_identical(lengths, data, start, length, n):
    book = incomplete_book(lengths)
    payload = np.frombuffer(data, dtype=np.uint8)
    length = min(length, 8 * len(data) - start)
    a = run_decode(NUMBA, payload, start, length, n, book)
    b = run_decode(NUMPY, payload, start, length, n, book)
    assert a[:3] == b[:3]
    assert np.array_equal(a[3][:2 + a[1]], b[3][:2 + b[1]])


def test_env_flag_selects_numpy():
    code = "from etcw import _kernels; print(_kernels.BACKEND_NAME)"
    for flag, expected in (("1", "numpy"), ("0", "numba"), ("", "numba")):
        env = dict(os.environ, ETCW_DISABLE_NUMBA=flag)
        result = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                text=True, check=True)
        assert result.stdout.strip() == expected


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.load_backend("cuda")


def test_backend_benchmark_runs():
    script = os.path.join(os.path.dirname(__file__), "..", "benchmarks", "bench_backends.py")
    result = subprocess.run([sys.executable, script, "--elements", "20000", "--trials", "1"],
                            capture_output=True, text=True, check=True)
    assert "numba speedup" in result.stdout
