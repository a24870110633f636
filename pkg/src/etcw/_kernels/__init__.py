"""Backend selection for the Huffman kernels.

The numba backend is used when numba imports and ``ETCW_DISABLE_NUMBA``
is unset (or ``0``/``false``).  Both backends are importable by name so
tests and benchmarks can compare them directly.
"""

import importlib
import os

from ._numpy import EXHAUSTED, INVALID, OK, TRAILING

STATUS_NAMES = {OK: "ok", EXHAUSTED: "exhausted", TRAILING: "trailing", INVALID: "invalid"}

# kernels keep a whole codeword plus a partial byte in one 64-bit accumulator
MAX_KERNEL_CODE_LENGTH = 56


def _numba_requested() -> bool:
    flag = os.environ.get("ETCW_DISABLE_NUMBA", "").strip().lower()
    return flag in ("", "0", "false", "no", "off")


def load_backend(name: str):
    """Return the kernel module for ``"numba"`` or ``"numpy"``."""
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    return importlib.import_module(f"._{name}", __name__)


def _default_backend():
    if _numba_requested():
        try:
            return "numba", load_backend("numba")
        except ImportError:
            pass
    return "numpy", load_backend("numpy")


BACKEND_NAME, backend = _default_backend()


def get_backend(name: str | None = None):
    return backend if name is None else load_backend(name)
