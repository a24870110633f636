"""Vectorized numpy versions of the Huffman kernels.

Same signatures and results as the numba kernels.  Decoding cannot walk
the stream symbol by symbol without a Python loop, so it instead resolves
a codeword at *every* bit position, then finds the positions reachable
from the segment start by pointer doubling over the ``next = pos + len``
map.  That costs O(bits * log(symbols)) work but stays in numpy.
"""

import numpy as np

OK, EXHAUSTED, TRAILING, INVALID = 0, 1, 2, 3


def _encode_bits(codes, words, lens):
    seg_lens = lens[codes].astype(np.int64)
    seg_words = words[codes]
    ends = np.cumsum(seg_lens)
    total = int(ends[-1]) if ends.size else 0
    starts = ends - seg_lens
    bits = np.zeros(total, dtype=np.uint8)
    for j in range(int(seg_lens.max()) if seg_lens.size else 0):
        live = seg_lens > j
        shift = (seg_lens[live] - 1 - j).astype(np.uint64)
        bits[starts[live] + j] = ((seg_words[live] >> shift) & np.uint64(1)).astype(np.uint8)
    return bits


def encode_segments(codes, words, lens, elem_starts, byte_offsets, out):
    for k in range(byte_offsets.shape[0]):
        packed = np.packbits(_encode_bits(codes[elem_starts[k]:elem_starts[k + 1]], words, lens))
        out[byte_offsets[k]:byte_offsets[k] + packed.size] = packed


def _resolve_all(bits, count, first_code, first_index, sorted_syms, max_len):
    """Codeword (length, symbol) starting at every bit position; length 0
    where no codeword resolves within ``max_len`` bits of zero padding."""
    total = bits.size
    padded = np.concatenate([bits, np.zeros(max_len, dtype=np.uint8)]).astype(np.int64)
    code = np.zeros(total, dtype=np.int64)
    length = np.zeros(total, dtype=np.int64)
    symbol = np.zeros(total, dtype=np.int64)
    for n in range(1, max_len + 1):
        code = (code << 1) | padded[n - 1:n - 1 + total]
        if count[n] == 0:
            continue
        offset = code - first_code[n]
        hit = (length == 0) & (offset >= 0) & (offset < count[n])
        length[hit] = n
        symbol[hit] = sorted_syms[first_index[n] + offset[hit]]
    return length, symbol


def decode_segment(payload, bit_start, bit_length, n, out, out_start,
                   lut_sym, lut_len, lut_bits, count, first_code, first_index,
                   sorted_syms, max_len):
    byte_lo = bit_start >> 3
    byte_hi = (bit_start + bit_length + 7) >> 3
    bits = np.unpackbits(np.asarray(payload[byte_lo:byte_hi], dtype=np.uint8))
    skip = bit_start - 8 * byte_lo
    bits = bits[skip:skip + bit_length]
    total = bits.size
    if n == 0:
        return (OK if total == 0 else TRAILING), 0, 0

    length, symbol = _resolve_all(bits, count, first_code, first_index, sorted_syms, max_len)
    positions = np.arange(total, dtype=np.int64)
    # states: 0..total-1 bit positions, total = clean end, total+1 = dead
    end_state, dead = total, total + 1
    nxt = np.full(total + 2, dead, dtype=np.int64)
    fits = (length > 0) & (positions + length <= total)
    nxt[:total][fits] = positions[fits] + length[fits]

    # pos_i = nxt^i(0) for i in 0..n, composed from powers nxt^(2^k)
    steps = np.arange(n + 1, dtype=np.int64)
    walk = np.zeros(n + 1, dtype=np.int64)
    jump = nxt
    k = 0
    while (1 << k) <= n:
        sel = ((steps >> k) & 1).astype(bool)
        walk[sel] = jump[walk[sel]]
        jump = jump[jump]
        k += 1

    # walk[i] is where symbol i starts; the first state outside the bit
    # range tells how decoding stopped
    outside = np.flatnonzero(walk >= end_state)
    first = int(outside[0]) if outside.size else n + 1
    if first > n:
        out[out_start:out_start + n] = symbol[walk[:n]]
        return TRAILING, n, int(walk[n])
    if walk[first] == end_state:
        out[out_start:out_start + first] = symbol[walk[:first]]
        if first == n:
            return OK, n, total
        return EXHAUSTED, first, total
    # dead: symbol first-1 did not resolve within the remaining bits
    done = first - 1
    out[out_start:out_start + done] = symbol[walk[:done]]
    p = int(walk[done])
    if length[p] == 0 and p + max_len <= total:
        return INVALID, done, p
    return EXHAUSTED, done, p
