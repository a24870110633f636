"""Uniform integer quantization of weight tensors.

Two grids are supported per tensor:

* ``unsigned``:   code = round(w / s),        s = max / (2^b - 1)
* ``asymmetric``: code = round((w - z) / s),  s = (max - min) / (2^b - 1), z = min

Scale and zero-point are rounded to float32 when computed, because that is
how they are stored in an archive; the division and rounding run in
float64 on those float32 parameters, so a decoded archive dequantizes to
exactly the same floats as the in-memory pipeline.  Rounding is
half-to-even and codes are clamped into ``[0, 2^b - 1]``.

A constant tensor has no range to spread over the grid.  It gets
``s = 1``, ``z = min``, all codes 0 and ``degenerate=True``; dequantizing
it is exact.  The degenerate grid is asymmetric even when unsigned was
requested, since an unsigned grid pins ``z`` at 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ValidationError
from .tensor_store import WORKING_DTYPE, FloatTensor

SUPPORTED_BITS = (4, 8)
SCHEMES = ("unsigned", "asymmetric")
DEFAULT_BLOCK_SIZE = 32


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class QuantParams:
    scheme: str
    bits: int
    scale: float
    zero_point: float = 0.0
    degenerate: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}")
        if self.bits not in SUPPORTED_BITS:
            raise ValidationError(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValidationError(f"scale must be positive and finite, got {self.scale}")
        if not math.isfinite(self.zero_point):
            raise ValidationError(f"zero_point must be finite, got {self.zero_point}")
        if self.scheme == "unsigned" and self.zero_point != 0.0:
            raise ValidationError("unsigned scheme requires zero_point 0")

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1


@dataclass(frozen=True, eq=False)
class QuantTensor:
    """Integer codes of one tensor plus the grid(s) that produced them.

    ``params`` holds one entry at tensor granularity and one per block of
    ``block_size`` consecutive elements at block granularity.
    """

    name: str
    shape: tuple[int, ...]
    params: tuple[QuantParams, ...]
    codes: np.ndarray
    block_size: int | None = None

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes).reshape(-1)
        if codes.dtype != np.uint8:
            if codes.size and (codes.min() < 0 or codes.max() > 255):
                raise ValidationError("codes do not fit in uint8", tensor=self.name)
            codes = codes.astype(np.uint8)
        n = math.prod(self.shape)
        if codes.size != n:
            raise ValidationError(f"{codes.size} codes for shape {list(self.shape)}",
                                  tensor=self.name)
        if not self.params:
            raise ValidationError("no quantization parameters", tensor=self.name)
        bits = self.params[0].bits
        if any(p.bits != bits for p in self.params):
            raise ValidationError("mixed bit-widths within one tensor", tensor=self.name)
        if codes.size and int(codes.max()) > (1 << bits) - 1:
            raise ValidationError(f"code out of range for {bits}-bit grid", tensor=self.name)
        expected = 1 if self.block_size is None else -(-n // self.block_size)
        if len(self.params) != expected:
            raise ValidationError(
                f"expected {expected} parameter set(s), got {len(self.params)}", tensor=self.name)
        object.__setattr__(self, "shape", tuple(self.shape))
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "codes", codes)

    @property
    def bits(self) -> int:
        return self.params[0].bits

    @property
    def granularity(self) -> str:
        return "tensor" if self.block_size is None else "block"

    @property
    def scheme(self) -> str:
        return self.params[0].scheme

    @property
    def size(self) -> int:
        return self.codes.size

    def param_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-element (scale, zero_point) as float64 arrays, or scalars broadcast."""
        scale = np.array([p.scale for p in self.params], dtype=np.float64)
        zero = np.array([p.zero_point for p in self.params], dtype=np.float64)
        if self.block_size is None:
            return scale, zero
        return (np.repeat(scale, self.block_size)[:self.size],
                np.repeat(zero, self.block_size)[:self.size])

    def __eq__(self, other):
        if not isinstance(other, QuantTensor):
            return NotImplemented
        return (self.name == other.name and self.shape == other.shape
                and self.params == other.params and self.block_size == other.block_size
                and np.array_equal(self.codes, other.codes))


def as_tensor(values, name: str = "tensor") -> FloatTensor:
    """Wrap a bare array-like as a flat FloatTensor; FloatTensors pass through."""
    if isinstance(values, FloatTensor):
        return values
    arr = np.asarray(values, dtype=WORKING_DTYPE).reshape(-1)
    if arr.size == 0:
        raise ValidationError("empty tensor", tensor=name)
    return FloatTensor(name, (arr.size,), arr)


def select_scheme(tensor) -> str:
    """``unsigned`` when every weight is non-negative, else ``asymmetric``."""
    values = as_tensor(tensor).values
    return "unsigned" if values.min() >= 0 else "asymmetric"


def _params_from_range(lo: float, hi: float, scheme: str, bits: int) -> QuantParams:
    levels = (1 << bits) - 1
    if hi == lo:
        return QuantParams("asymmetric" if lo != 0.0 or scheme == "asymmetric" else "unsigned",
                           bits, 1.0, _f32(lo), degenerate=True)
    if scheme == "unsigned":
        scale, zero = _f32(hi / levels), 0.0
    else:
        scale, zero = _f32((hi - lo) / levels), _f32(lo)
    if scale <= 0.0:
        # range so small the step underflows float32
        return QuantParams("asymmetric", bits, 1.0, _f32(lo), degenerate=True)
    return QuantParams(scheme, bits, scale, zero)


def compute_params(tensor, scheme: str, bits: int) -> QuantParams:
    tensor = as_tensor(tensor)
    values = tensor.values
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown scheme {scheme!r}", tensor=tensor.name)
    if bits not in SUPPORTED_BITS:
        raise ValidationError(f"bits must be one of {SUPPORTED_BITS}, got {bits}",
                              tensor=tensor.name)
    lo, hi = float(values.min()), float(values.max())
    if scheme == "unsigned" and lo < 0:
        raise ValidationError(f"unsigned scheme requested but minimum weight is {lo}",
                              tensor=tensor.name)
    return _params_from_range(lo, hi, scheme, bits)


def _codes(values: np.ndarray, scale, zero, levels: int) -> np.ndarray:
    q = np.rint((values.astype(np.float64) - zero) / scale)
    return np.clip(q, 0, levels).astype(np.uint8)


def quantize(tensor: FloatTensor, params: QuantParams) -> QuantTensor:
    tensor = as_tensor(tensor)
    values = tensor.values
    if params.scheme == "unsigned" and values.size and values.min() < 0:
        raise ValidationError("unsigned grid cannot hold negative weights", tensor=tensor.name)
    codes = _codes(values, params.scale, params.zero_point, params.levels)
    return QuantTensor(tensor.name, tensor.shape, (params,), codes)


def quantize_tensor(tensor: FloatTensor, bits: int, scheme: str = "auto") -> QuantTensor:
    """Select (or take) a scheme, compute its grid and quantize in one step."""
    tensor = as_tensor(tensor)
    if scheme == "auto":
        scheme = select_scheme(tensor)
    return quantize(tensor, compute_params(tensor, scheme, bits))


def quantize_blockwise(tensor: FloatTensor, bits: int,
                       block_size: int = DEFAULT_BLOCK_SIZE) -> QuantTensor:
    """Asymmetric quantization with an independent grid per block of
    ``block_size`` consecutive elements (the last block may be short)."""
    tensor = as_tensor(tensor)
    if block_size < 2:
        raise ValidationError(f"block_size must be at least 2, got {block_size}",
                              tensor=tensor.name)
    if bits not in SUPPORTED_BITS:
        raise ValidationError(f"bits must be one of {SUPPORTED_BITS}, got {bits}",
                              tensor=tensor.name)
    values = tensor.values
    n = values.size
    levels = (1 << bits) - 1
    starts = np.arange(0, n, block_size)
    lo = np.minimum.reduceat(values, starts).astype(np.float64)
    hi = np.maximum.reduceat(values, starts).astype(np.float64)

    scale = ((hi - lo) / levels).astype(np.float32).astype(np.float64)
    zero = lo.astype(np.float32).astype(np.float64)
    degenerate = (hi == lo) | (scale <= 0)
    scale[degenerate] = 1.0

    counts = np.diff(np.append(starts, n))
    codes = _codes(values, np.repeat(scale, counts), np.repeat(zero, counts), levels)
    params = tuple(
        QuantParams("asymmetric", bits, float(s), float(z), degenerate=bool(d))
        for s, z, d in zip(scale, zero, degenerate)
    )
    return QuantTensor(tensor.name, tensor.shape, params, codes, block_size=block_size)


def dequantize(qt: QuantTensor) -> FloatTensor:
    """code * s + z, evaluated in float64 and rounded once to float32."""
    scale, zero = qt.param_arrays()
    values = (qt.codes.astype(np.float64) * scale + zero).astype(WORKING_DTYPE)
    return FloatTensor(qt.name, qt.shape, values)


def quantize_model(tensors: Sequence[FloatTensor], bits: int, scheme: str = "auto",
                   granularity: str = "tensor",
                   block_size: int = DEFAULT_BLOCK_SIZE) -> list[QuantTensor]:
    if granularity == "tensor":
        return [quantize_tensor(t, bits, scheme) for t in tensors]
    if granularity == "block":
        if scheme == "unsigned":
            raise ValidationError("block granularity always uses the asymmetric scheme")
        return [quantize_blockwise(t, bits, block_size) for t in tensors]
    raise ValidationError(f"unknown granularity {granularity!r}")


class QuantError(NamedTuple):
    max_error: float      # max |dequantized - original| over non-clipped elements
    max_half_step: float  # max(s) / 2
    worst_excess: float   # max(error_i - s_i / 2) over non-clipped elements
    clipped: int
    within_bound: bool    # every non-clipped error_i <= s_i / 2 + ulps * ulp_i


def quantization_error(original: FloatTensor, qt: QuantTensor, ulps: int = 4) -> QuantError:
    scale, zero = qt.param_arrays()
    x = original.values.astype(np.float64)
    raw = np.rint((x - zero) / scale)
    keep = (raw >= 0) & (raw <= (1 << qt.bits) - 1)
    deq = dequantize(qt).values
    err = np.abs(deq.astype(np.float64) - x)
    half = np.broadcast_to(scale, x.shape) / 2
    if not keep.any():
        return QuantError(0.0, float(half.max()), -math.inf, int(x.size), True)
    # ulp at float32 precision of whichever of original/dequantized is larger
    slack = ulps * np.spacing(np.maximum(np.abs(original.values), np.abs(deq))).astype(np.float64)
    excess = err[keep] - half[keep]
    return QuantError(float(err[keep].max()), float(half.max()), float(excess.max()),
                      int((~keep).sum()), bool((excess <= slack[keep]).all()))
