"""Uncompressed model weights: a text manifest plus one little-endian blob.

Manifest layout::

    # comments and blank lines are ignored
    model_name = tiny
    blob_file = tiny.bin
    w0 [64,32] float32 0 8192
    w1 [32] float16 8192 64

Tensor lines are ``name shape dtype byte_offset byte_length``.  The blob
path is resolved relative to the manifest's directory.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ManifestError, ValidationError

WORKING_DTYPE = np.float32

_STORAGE_DTYPES = {
    "float32": np.dtype("<f4"),
    "float16": np.dtype("<f2"),
}


def _numel(shape: Sequence[int]) -> int:
    return math.prod(shape)


@dataclass(frozen=True, eq=False)
class FloatTensor:
    """A named weight tensor held flat, row-major, in float32.

    ``dtype`` records the storage precision (``float32`` or ``float16``);
    ``values`` is always float32 and read-only.
    """

    name: str
    shape: tuple[int, ...]
    values: np.ndarray
    dtype: str = "float32"

    def __post_init__(self):
        if not self.name or any(c.isspace() for c in self.name):
            raise ValidationError(f"invalid tensor name {self.name!r}")
        shape = tuple(int(d) for d in self.shape)
        if any(d <= 0 for d in shape):
            raise ValidationError(f"non-positive dimension in shape {list(shape)}", tensor=self.name)
        if self.dtype not in _STORAGE_DTYPES:
            raise ValidationError(f"unsupported dtype {self.dtype!r}", tensor=self.name)
        values = np.ascontiguousarray(self.values, dtype=WORKING_DTYPE).reshape(-1)
        if values.size != _numel(shape):
            raise ValidationError(
                f"{values.size} values do not fill shape {list(shape)}", tensor=self.name)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise ValidationError(
                f"non-finite value {values[bad[0]]} at flat index {bad[0]}", tensor=self.name)
        if values.flags.writeable:
            if np.may_share_memory(values, self.values):
                values = values.copy()
            values.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.values.size

    def array(self) -> np.ndarray:
        """Values reshaped to ``shape`` (a read-only view)."""
        return self.values.reshape(self.shape)

    def __eq__(self, other):
        if not isinstance(other, FloatTensor):
            return NotImplemented
        return (self.name == other.name and self.shape == other.shape
                and self.dtype == other.dtype
                and self.values.tobytes() == other.values.tobytes())


@dataclass(frozen=True)
class TensorEntry:
    name: str
    shape: tuple[int, ...]
    dtype: str
    byte_offset: int
    byte_length: int


@dataclass(frozen=True)
class ModelManifest:
    model_name: str
    blob_file: str
    tensors: tuple[TensorEntry, ...] = field(default_factory=tuple)

    @property
    def total_parameters(self) -> int:
        return sum(_numel(t.shape) for t in self.tensors)

    def validate(self) -> None:
        seen = set()
        end = 0
        for t in self.tensors:
            if t.name in seen:
                raise ManifestError("duplicate tensor name", tensor=t.name)
            seen.add(t.name)
            if t.dtype not in _STORAGE_DTYPES:
                raise ManifestError(f"unsupported dtype {t.dtype!r}", tensor=t.name)
            if any(d <= 0 for d in t.shape):
                raise ManifestError(f"non-positive dimension in shape {list(t.shape)}",
                                    tensor=t.name)
            expected = _numel(t.shape) * _STORAGE_DTYPES[t.dtype].itemsize
            if t.byte_length != expected:
                raise ManifestError(
                    f"byte length {t.byte_length} does not match shape {list(t.shape)} "
                    f"x {t.dtype} ({expected} bytes)", tensor=t.name)
            if t.byte_offset < end:
                raise ManifestError("overlapping tensor regions", tensor=t.name)
            end = t.byte_offset + t.byte_length

    def dumps(self) -> str:
        lines = [f"model_name = {self.model_name}", f"blob_file = {self.blob_file}"]
        for t in self.tensors:
            shape = "[" + ",".join(str(d) for d in t.shape) + "]"
            lines.append(f"{t.name} {shape} {t.dtype} {t.byte_offset} {t.byte_length}")
        return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> ModelManifest:
    header: dict[str, str] = {}
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line and not entries:
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ManifestError(f"line {lineno}: expected 'name shape dtype offset length'")
        name, shape_s, dtype, off_s, len_s = parts
        if not (shape_s.startswith("[") and shape_s.endswith("]")):
            raise ManifestError(f"line {lineno}: shape must look like [d0,d1,...]")
        try:
            inner = shape_s[1:-1].strip()
            shape = tuple(int(d) for d in inner.split(",")) if inner else ()
            offset, length = int(off_s), int(len_s)
        except ValueError:
            raise ManifestError(f"line {lineno}: non-integer shape, offset or length") from None
        if offset < 0 or length < 0:
            raise ManifestError(f"line {lineno}: negative offset or length")
        entries.append(TensorEntry(name, shape, dtype, offset, length))
    for key in ("model_name", "blob_file"):
        if not header.get(key):
            raise ManifestError(f"manifest is missing '{key}'")
    manifest = ModelManifest(header["model_name"], header["blob_file"], tuple(entries))
    manifest.validate()
    return manifest


def load_model(manifest_path: str | os.PathLike) -> list[FloatTensor]:
    """Read every tensor listed in a manifest, in manifest order."""
    manifest_path = Path(manifest_path)
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {manifest_path}") from None
    manifest = parse_manifest(text)
    blob_path = manifest_path.parent / manifest.blob_file
    try:
        blob = blob_path.read_bytes()
    except FileNotFoundError:
        raise ManifestError(f"blob file not found: {blob_path}") from None

    tensors = []
    for t in manifest.tensors:
        if t.byte_offset + t.byte_length > len(blob):
            raise ManifestError(
                f"region [{t.byte_offset}, {t.byte_offset + t.byte_length}) runs past end "
                f"of blob ({len(blob)} bytes)", tensor=t.name)
        raw = np.frombuffer(blob, dtype=_STORAGE_DTYPES[t.dtype],
                            count=_numel(t.shape), offset=t.byte_offset)
        tensors.append(FloatTensor(t.name, t.shape, raw.astype(WORKING_DTYPE), t.dtype))
    return tensors


def save_model(tensors: Sequence[FloatTensor], manifest_path: str | os.PathLike,
               model_name: str | None = None, blob_file: str | None = None) -> ModelManifest:
    """Write ``tensors`` as a manifest plus a densely packed blob next to it."""
    manifest_path = Path(manifest_path)
    if model_name is None:
        model_name = manifest_path.stem
    if blob_file is None:
        blob_file = manifest_path.stem + ".bin"

    entries = []
    chunks = []
    offset = 0
    for t in tensors:
        stored = t.values.astype(_STORAGE_DTYPES[t.dtype])
        if t.dtype == "float16" and not np.array_equal(stored.astype(WORKING_DTYPE), t.values):
            raise ValidationError("values are not representable in float16", tensor=t.name)
        data = stored.tobytes()
        entries.append(TensorEntry(t.name, t.shape, t.dtype, offset, len(data)))
        chunks.append(data)
        offset += len(data)
    manifest = ModelManifest(model_name, blob_file, tuple(entries))
    manifest.validate()

    (manifest_path.parent / blob_file).write_bytes(b"".join(chunks))
    manifest_path.write_text(manifest.dumps(), encoding="utf-8")
    return manifest


# -- synthetic models --------------------------------------------------------

@dataclass(frozen=True)
class Gaussian:
    mean: float = 0.0
    stddev: float = 1.0

    def __post_init__(self):
        if not self.stddev > 0:
            raise ValidationError(f"stddev must be positive, got {self.stddev}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mean, self.stddev, n)


@dataclass(frozen=True)
class Uniform:
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi >= self.lo:
            raise ValidationError(f"uniform bounds out of order: [{self.lo}, {self.hi}]")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, n)


@dataclass(frozen=True)
class GaussianWithOutliers:
    """Gaussian bulk where a random ``outlier_fraction`` of entries is redrawn
    with stddev multiplied by ``outlier_scale``."""

    mean: float = 0.0
    stddev: float = 1.0
    outlier_fraction: float = 0.001
    outlier_scale: float = 50.0

    def __post_init__(self):
        if not self.stddev > 0:
            raise ValidationError(f"stddev must be positive, got {self.stddev}")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValidationError(
                f"outlier_fraction must lie in [0, 1], got {self.outlier_fraction}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        values = rng.normal(self.mean, self.stddev, n)
        mask = rng.random(n) < self.outlier_fraction
        values[mask] = rng.normal(self.mean, self.stddev * self.outlier_scale, int(mask.sum()))
        return values


Distribution = Gaussian | Uniform | GaussianWithOutliers

_DISTRIBUTIONS = {
    "gaussian": Gaussian,
    "uniform": Uniform,
    "gaussian_with_outliers": GaussianWithOutliers,
    "outliers": GaussianWithOutliers,
}


def parse_distribution(text: str) -> Distribution:
    """Parse ``gaussian(0,0.02)``, ``uniform(-1,1)`` or
    ``gaussian_with_outliers(0,0.02,0.001,50)``."""
    text = text.strip()
    name, _, rest = text.partition("(")
    if not rest.endswith(")") or name not in _DISTRIBUTIONS:
        raise ValidationError(f"cannot parse distribution {text!r}")
    try:
        args = [float(a) for a in rest[:-1].split(",") if a.strip()]
        return _DISTRIBUTIONS[name](*args)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"cannot parse distribution {text!r}: {exc}") from None


def generate_synthetic(spec, seed: int = 0) -> list[FloatTensor]:
    """Draw a deterministic synthetic model.

    ``spec`` is a sequence of ``(name, shape, distribution)`` or
    ``(name, shape, distribution, dtype)`` tuples.  All tensors are drawn
    in order from one generator seeded with ``seed``.
    """
    rng = np.random.default_rng(seed)
    tensors = []
    for item in spec:
        name, shape, dist = item[:3]
        dtype = item[3] if len(item) > 3 else "float32"
        if isinstance(dist, str):
            dist = parse_distribution(dist)
        shape = tuple(int(d) for d in shape)
        values = dist.sample(rng, _numel(shape))
        values = values.astype(_STORAGE_DTYPES[dtype]).astype(WORKING_DTYPE)
        tensors.append(FloatTensor(name, shape, values, dtype))
    return tensors
