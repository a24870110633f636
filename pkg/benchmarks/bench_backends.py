"""Encode/decode throughput of the numba kernels against the numpy fallback.

    python benchmarks/bench_backends.py --elements 4000000 --bits 8

Both backends run in this process (selected per call, not through
ETCW_DISABLE_NUMBA) and their outputs are checked for equality.  The numba
kernels are compiled once before timing.
"""

import argparse
import statistics
import time

import numpy as np

from etcw.huffman import build_codebook, build_histogram
from etcw.parallel_decode import decode_all_serial, encode_tensor
from etcw.quantizer import quantize_tensor
from etcw.tensor_store import generate_synthetic


def median_seconds(fn, trials):
    samples = []
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--elements", type=int, default=4_000_000)
    parser.add_argument("--bits", type=int, choices=(4, 8), default=8)
    parser.add_argument("--segment-elements", type=int, default=65536)
    parser.add_argument("--trials", type=int, default=5)
    parser.add_argument("--numpy-trials", type=int, default=1,
                        help="the fallback is slow; one trial is usually enough")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    [weights] = generate_synthetic([("w", (args.elements,), "gaussian(0,0.02)")], args.seed)
    qt = quantize_tensor(weights, args.bits)
    book = build_codebook(build_histogram(qt))
    n = qt.size

    # compile the numba kernels outside the timed region
    warm = encode_tensor("w", qt.codes[:1000], book, 100, backend="numba")
    decode_all_serial([warm], backend="numba")

    results, encoded = {}, {}
    for backend, trials in (("numba", args.trials), ("numpy", args.numpy_trials)):
        enc = median_seconds(lambda: encode_tensor("w", qt.codes, book, args.segment_elements,
                                                   backend=backend), trials)
        encoded[backend] = encode_tensor("w", qt.codes, book, args.segment_elements,
                                         backend=backend)
        dec = median_seconds(lambda: decode_all_serial([encoded[backend]], backend=backend),
                             trials)
        results[backend] = (enc, dec)

    assert encoded["numba"].bitstream == encoded["numpy"].bitstream
    out = {b: decode_all_serial([encoded["numba"]], backend=b)["w"] for b in results}
    assert np.array_equal(out["numba"], qt.codes) and np.array_equal(out["numpy"], qt.codes)

    print(f"{n} elements, {args.bits}-bit codes, {len(encoded['numba'].segments)} segments, "
          f"{encoded['numba'].encoded_bits / n:.3f} bits/element")
    print(f"{'backend':<8} {'encode ms':>10} {'Melem/s':>9} {'decode ms':>10} {'Melem/s':>9}")
    for backend, (enc, dec) in results.items():
        print(f"{backend:<8} {enc * 1e3:10.1f} {n / enc / 1e6:9.1f} {dec * 1e3:10.1f} "
              f"{n / dec / 1e6:9.1f}")
    enc_ratio = results["numpy"][0] / results["numba"][0]
    dec_ratio = results["numpy"][1] / results["numba"][1]
    print(f"numba speedup: encode {enc_ratio:.1f}x, decode {dec_ratio:.1f}x")


if __name__ == "__main__":
    main()
