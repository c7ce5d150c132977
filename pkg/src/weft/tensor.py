"""Dense float32 tensors in NCHW layout.

Every value flowing through the runtime is a rank 1..4 float32 tensor with
row-major (last dimension fastest) contiguous storage. Tensors are frozen
after construction; kernels fill their output buffer and then publish it via
``Tensor.wrap``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

MAX_RANK = 4

# splitmix64 constants (Steele, Lea & Flood's 64-bit finalizer); used for the
# portable seeded-uniform fill so golden files reproduce on any platform.
_SM64_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SM64_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_MIX2 = np.uint64(0x94D049BB133111EB)


def checked_dims(dims: Iterable[int]) -> tuple[int, ...]:
    """Validate extents: rank 1..4, every extent a positive integer."""
    out = tuple(int(d) for d in dims)
    if not 1 <= len(out) <= MAX_RANK:
        raise ShapeError(f"rank must be 1..{MAX_RANK}, got {len(out)}")
    for d in out:
        if d < 1:
            raise ShapeError(f"extents must be >= 1, got {out}")
    return out


def numel(dims: Sequence[int]) -> int:
    n = 1
    for d in dims:
        n *= int(d)
    return n


def offset_of(dims: Sequence[int], coords: Sequence[int]) -> int:
    """Row-major flat offset; for NCHW this is ((n*C + c)*H + h)*W + w."""
    if len(coords) != len(dims):
        raise ShapeError(f"coords rank {len(coords)} != shape rank {len(dims)}")
    off = 0
    for d, c in zip(dims, coords):
        if not 0 <= c < d:
            raise ShapeError(f"coordinate {tuple(coords)} out of range for {tuple(dims)}")
        off = off * d + c
    return off


def coords_of(dims: Sequence[int], offset: int) -> tuple[int, ...]:
    """Inverse of offset_of."""
    if not 0 <= offset < numel(dims):
        raise ShapeError(f"offset {offset} out of range for {tuple(dims)}")
    coords = []
    for d in reversed(dims):
        coords.append(offset % d)
        offset //= d
    return tuple(reversed(coords))


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First `count` outputs of splitmix64 seeded with `seed`, as uint64."""
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * _SM64_GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _SM64_MIX1
    z = (z ^ (z >> np.uint64(27))) * _SM64_MIX2
    return z ^ (z >> np.uint64(31))


class Tensor:
    """Immutable dense float32 array, rank 1..4, C-contiguous."""

    __slots__ = ("_data",)

    def __init__(self, data: np.ndarray, copy: bool = True):
        arr = np.array(data, dtype=np.float32, copy=copy, order="C")
        checked_dims(arr.shape)
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def wrap(cls, arr: np.ndarray) -> "Tensor":
        """Adopt a freshly built float32 buffer without copying."""
        if arr.dtype != np.float32 or not arr.flags.c_contiguous:
            raise ShapeError("wrap requires a C-contiguous float32 array")
        return cls(arr, copy=False)

    @classmethod
    def zeros(cls, dims: Iterable[int]) -> "Tensor":
        return cls(np.zeros(checked_dims(dims), dtype=np.float32), copy=False)

    @classmethod
    def full(cls, dims: Iterable[int], value: float) -> "Tensor":
        return cls(np.full(checked_dims(dims), value, dtype=np.float32), copy=False)

    @classmethod
    def sequence(cls, dims: Iterable[int]) -> "Tensor":
        """0, 1, 2, ... in row-major order."""
        d = checked_dims(dims)
        return cls(np.arange(numel(d), dtype=np.float32).reshape(d), copy=False)

    @classmethod
    def seeded_uniform(cls, dims: Iterable[int], seed: int,
                       lo: float = -1.0, hi: float = 1.0) -> "Tensor":
        """Uniform values in [lo, hi) from splitmix64; bit-identical for a
        fixed seed on every platform."""
        d = checked_dims(dims)
        bits = splitmix64(seed, numel(d))
        u = (bits >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        vals = (lo + u * (hi - lo)).astype(np.float32)
        return cls(vals.reshape(d), copy=False)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def numel(self) -> int:
        return int(self._data.size)

    def reshape(self, dims: Iterable[int]) -> "Tensor":
        d = checked_dims(dims)
        if numel(d) != self.numel:
            raise ShapeError(f"cannot reshape {self.shape} (numel {self.numel}) "
                             f"to {d} (numel {numel(d)})")
        return Tensor(self._data.reshape(d), copy=False)

    def tobytes(self) -> bytes:
        """Raw little-endian float32 bytes, row-major."""
        return self._data.astype("<f4", copy=False).tobytes()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


@dataclass(frozen=True)
class ComparisonReport:
    max_abs_diff: float
    max_rel_diff: float
    argmax_match: bool
    worst_index: int


def tensor_compare(a: Tensor, b: Tensor, rel_floor: float = 1e-12) -> ComparisonReport:
    """Elementwise difference summary; argmax_match is top-1 over the last axis."""
    if a.shape != b.shape:
        raise ShapeError(f"compare shapes differ: {a.shape} vs {b.shape}")
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    diff = np.abs(x - y)
    denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), rel_floor)
    worst = int(np.argmax(diff))
    argmax_match = bool(np.array_equal(np.argmax(x, axis=-1), np.argmax(y, axis=-1)))
    return ComparisonReport(
        max_abs_diff=float(diff.flat[worst]),
        max_rel_diff=float(np.max(diff / denom)),
        argmax_match=argmax_match,
        worst_index=worst,
    )


# --- tensor file I/O ---------------------------------------------------------
# Raw form: little-endian float32, shape supplied out of band.
# JSON form: {"shape": [...], "data": [...]} for small fixtures.

def read_raw(path, dims: Iterable[int]) -> Tensor:
    d = checked_dims(dims)
    with open(path, "rb") as fh:
        buf = fh.read()
    vals = np.frombuffer(buf, dtype="<f4")
    if vals.size != numel(d):
        raise ShapeError(f"{path}: {vals.size} values, shape {d} needs {numel(d)}")
    return Tensor(vals.reshape(d))


def write_raw(path, t: Tensor) -> None:
    with open(path, "wb") as fh:
        fh.write(t.tobytes())


def read_json_tensor(path) -> Tensor:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    d = checked_dims(obj["shape"])
    vals = np.asarray(obj["data"], dtype=np.float32)
    if vals.size != numel(d):
        raise ShapeError(f"{path}: {vals.size} values, shape {d} needs {numel(d)}")
    return Tensor(vals.reshape(d))


def write_json_tensor(path, t: Tensor) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"shape": list(t.shape), "data": [float(v) for v in t.data.flat]}, fh)
