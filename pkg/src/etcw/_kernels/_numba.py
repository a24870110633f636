"""Bit-level Huffman kernels compiled with numba.

All kernels are ``nogil`` so segment decodes dispatched from a thread
pool run concurrently.  Bit order is MSB-first within each byte.
"""

import numpy as np
from numba import njit

OK, EXHAUSTED, TRAILING, INVALID = 0, 1, 2, 3


@njit(nogil=True, cache=True)
def encode_segments(codes, words, lens, elem_starts, byte_offsets, out):
    """Encode ``codes[elem_starts[k]:elem_starts[k+1]]`` into ``out`` starting
    at byte ``byte_offsets[k]`` for every segment k.  ``out`` must be zeroed."""
    for k in range(byte_offsets.shape[0]):
        pos = byte_offsets[k]
        acc = np.uint64(0)
        nacc = 0
        for i in range(elem_starts[k], elem_starts[k + 1]):
            c = codes[i]
            n = np.int64(lens[c])
            acc = (acc << np.uint64(n)) | words[c]
            nacc += n
            while nacc >= 8:
                nacc -= 8
                out[pos] = np.uint8((acc >> np.uint64(nacc)) & np.uint64(0xFF))
                pos += 1
            acc &= (np.uint64(1) << np.uint64(nacc)) - np.uint64(1)
        if nacc > 0:
            out[pos] = np.uint8((acc << np.uint64(8 - nacc)) & np.uint64(0xFF))


@njit(nogil=True, cache=True, inline="always")
def _peek(payload, bit, nbits):
    # nbits <= 16; bytes past the end of payload read as zero
    byte = bit >> 3
    window = np.uint32(0)
    for j in range(3):
        window <<= np.uint32(8)
        if byte + j < payload.shape[0]:
            window |= np.uint32(payload[byte + j])
    shift = 24 - (bit & 7) - nbits
    return (window >> np.uint32(shift)) & np.uint32((1 << nbits) - 1)


@njit(nogil=True, cache=True)
def decode_segment(payload, bit_start, bit_length, n, out, out_start,
                   lut_sym, lut_len, lut_bits, count, first_code, first_index,
                   sorted_syms, max_len):
    """Decode ``n`` symbols from ``bit_length`` bits at ``bit_start``.

    Returns ``(status, symbols_decoded, bits_consumed)``.
    """
    end = bit_start + bit_length
    pos = bit_start
    i = 0
    while i < n:
        if pos >= end:
            return EXHAUSTED, i, pos - bit_start
        w = _peek(payload, pos, lut_bits)
        length = np.int64(lut_len[w])
        if length > 0:
            if pos + length > end:
                return EXHAUSTED, i, pos - bit_start
            out[out_start + i] = lut_sym[w]
            pos += length
        else:
            code = np.int64(0)
            length = 0
            sym = -1
            while length < max_len:
                if pos + length >= end:
                    return EXHAUSTED, i, pos - bit_start
                bit = (payload[(pos + length) >> 3] >> (7 - ((pos + length) & 7))) & 1
                code = (code << 1) | np.int64(bit)
                length += 1
                offset = code - first_code[length]
                if offset >= 0 and offset < count[length]:
                    sym = sorted_syms[first_index[length] + offset]
                    break
            if sym < 0:
                return INVALID, i, pos - bit_start
            out[out_start + i] = sym
            pos += length
        i += 1
    if pos != end:
        return TRAILING, i, pos - bit_start
    return OK, i, pos - bit_start
