import os

import numpy as np

from etcw.tensor_store import FloatTensor


def tensor(values, name="t", shape=None):
    values = np.asarray(values, dtype=np.float32).reshape(-1)
    return FloatTensor(name, tuple(shape or (values.size,)), values)


def cpu_count() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def feasible_lengths(k: int) -> np.ndarray:
    """Every length vector in [1, k-1]^k satisfying Kraft's inequality.

    Any such vector is realizable as a prefix code, and an optimal code on
    k >= 2 symbols never needs a codeword longer than k - 1.
    """
    grids = np.stack(np.meshgrid(*[np.arange(1, k)] * k, indexing="ij"), -1).reshape(-1, k)
    kraft = (2.0 ** -grids).sum(axis=1)
    return grids[kraft <= 1.0]


def brute_force_min_cost(counts) -> int:
    """Minimal total encoded bits over all prefix codes for ``counts``."""
    counts = np.asarray([c for c in counts if c > 0], dtype=np.int64)
    if counts.size == 1:
        return int(counts[0])
    return int((feasible_lengths(counts.size) @ counts).min())


def byte_owner(offset: int, meta: dict) -> int | None:
    """Index of the tensor whose record or payload holds ``offset``, else None."""
    for i, t in enumerate(meta["tensors"]):
        lo, hi = t["record_span"]
        plo, phi = t["payload_range"]
        if lo <= offset < hi or plo <= offset < phi:
            return i
    return None


def flip_sweep(data: bytes, meta: dict, read, masks=(0x01, 0x80, 0xFF)) -> list[str]:
    """Flip every byte with each mask; return a description of every flip that
    went undetected or was blamed on the wrong tensor."""
    from etcw.errors import CorruptDataError

    problems = []
    for offset in range(len(data)):
        owner = byte_owner(offset, meta)
        for mask in masks:
            bad = bytearray(data)
            bad[offset] ^= mask
            try:
                read(bytes(bad))
            except CorruptDataError as exc:
                if owner is None:
                    ok = exc.record is None and exc.tensor is None
                else:
                    # damage to the name or its length field leaves the name unreadable
                    name = meta["tensors"][owner]["name"]
                    start = meta["tensors"][owner]["record_span"][0]
                    in_name = start <= offset < start + 2 + len(name.encode())
                    ok = exc.record == owner and (exc.tensor == name or in_name)
                if not ok:
                    problems.append(f"byte {offset} ^ {mask:#04x}: expected owner {owner}, got "
                                    f"{type(exc).__name__}(record={exc.record}, "
                                    f"tensor={exc.tensor!r}): {exc.message}")
            else:
                problems.append(f"byte {offset} ^ {mask:#04x}: not detected")
    return problems
