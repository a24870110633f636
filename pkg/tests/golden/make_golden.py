"""Regenerate the golden archives and their expectation files.

    python tests/golden/make_golden.py

Only rerun this after a deliberate format change; the tests compare
against the checked-in bytes.
"""

import json
from pathlib import Path

import xxhash

from etcw.container import read_archive_bytes
from etcw.pipeline import compress_model, decode_archive
from etcw.tensor_store import generate_synthetic

HERE = Path(__file__).parent

CASES = {
    "tensor8": dict(
        spec=[("embed", (24, 16), "gaussian(0,0.02)"),
              ("norm", (16,), "uniform(0.5,1.5)"),
              ("const", (3, 5), "uniform(0.25,0.25)")],
        bits=8, granularity="tensor", target_elements=100, shuffle_seed=0, seed=1),
    "block4": dict(
        spec=[("attn.q", (12, 10), "gaussian(0,1)"),
              ("mlp.up", (10, 9), "gaussian_with_outliers(0,0.02,0.05,20)")],
        bits=4, granularity="block", target_elements=64, shuffle_seed=7, seed=2),
    "whole8": dict(
        spec=[("a", (40,), "gaussian(1,0.1)"),
              ("b", (7, 7), "uniform(-3,3)"),
              ("c", (5, 2, 3), "gaussian(0,0.5)")],
        bits=8, granularity="tensor", target_elements=None, shuffle_seed=2**63 + 5, seed=3),
}


def build(case: dict) -> bytes:
    tensors = generate_synthetic(case["spec"], case["seed"])
    data, _ = compress_model(tensors, case["bits"], granularity=case["granularity"],
                             target_elements=case["target_elements"],
                             shuffle_seed=case["shuffle_seed"])
    return data


def expectations(name: str, data: bytes) -> dict:
    archive = read_archive_bytes(data, name)
    codes = decode_archive(archive, workers=1)
    tensors = []
    offset = archive.payload_span[0]
    for r, span in zip(archive.records, archive.record_spans):
        tensors.append({
            "name": r.name, "shape": list(r.shape), "scheme": r.params[0].scheme,
            "segments": len(r.segments), "record_span": list(span),
            "payload_range": [offset, offset + len(r.payload)],
            "codes_xxh64": xxhash.xxh64_hexdigest(codes[r.name].tobytes()),
        })
        offset += len(r.payload)
    return {
        "file_bytes": len(data),
        "xxh64": xxhash.xxh64_hexdigest(data),
        "bits": archive.bits,
        "granularity": archive.granularity,
        "shuffle_seed": archive.shuffle_seed,
        "target_elements": archive.target_elements,
        "payload_span": list(archive.payload_span),
        "tensors": tensors,
    }

def main():
    for name, case in CASES.items():
        data = build(case)
        (HERE / f"{name}.etcw").write_bytes(data)
        (HERE / f"{name}.json").write_text(json.dumps(expectations(name, data), indent=2) + "\n")
        print(f"{name}.etcw: {len(data)} bytes")


if __name__ == "__main__":
    main()
