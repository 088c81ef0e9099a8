"""Feature-map and channel-statistics containers.

A :class:`FeatureMap` is an immutable float32 array in row-major
``(B, C, H, W)`` order. Statistics are carried as float64 vectors in
:class:`ChannelStats`.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, FormatError, ValidationError

_HEADER = struct.Struct("<4I")


class FeatureMap:
    """Dense ``(B, C, H, W)`` float32 tensor. Read-only after construction."""

    __slots__ = ("_data",)

    def __init__(self, data: np.ndarray):
        arr = np.array(data, dtype=np.float32, order="C", copy=True)
        if arr.ndim != 4:
            raise DimensionError(f"feature map must be 4-D (B,C,H,W), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionError(f"every dimension must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("feature map contains non-finite values")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "FeatureMap":
        # Internal: skip the copy/finite check for arrays produced by kernels.
        fm = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        arr.setflags(write=False)
        fm._data = arr
        return fm

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self._data.shape  # type: ignore[return-value]

    @property
    def batch(self) -> int:
        return self._data.shape[0]

    @property
    def channels(self) -> int:
        return self._data.shape[1]

    def values(self) -> np.ndarray:
        """Flat copy of the data in B,C,H,W order."""
        return self._data.ravel().copy()

    def __len__(self) -> int:
        return self.batch

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._data, other._data)

    def __repr__(self) -> str:
        return f"FeatureMap(shape={self.shape})"


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and (population) standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != std.shape:
            raise DimensionError(f"mean has {mean.size} channels but std has {std.size}")
        if not (np.isfinite(mean).all() and np.isfinite(std).all()):
            raise ValidationError("channel statistics must be finite")
        if (std < 0).any():
            raise ValidationError("standard deviation entries must be >= 0")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def channels(self) -> int:
        return self.mean.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChannelStats):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)


def feature_map_from_values(dims: Sequence[int], values: Iterable[float]) -> FeatureMap:
    if len(dims) != 4:
        raise DimensionError(f"dims must be (B, C, H, W), got {tuple(dims)}")
    dims = tuple(int(d) for d in dims)
    if min(dims) < 1:
        raise DimensionError(f"every dimension must be >= 1, got {dims}")
    flat = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float32).ravel()
    expected = int(np.prod(dims))
    if flat.size != expected:
        raise DimensionError(f"dims {dims} need {expected} values, got {flat.size}")
    return FeatureMap(flat.reshape(dims))


def slice_sample(fm: FeatureMap, i: int) -> FeatureMap:
    if not 0 <= i < fm.batch:
        raise IndexError(f"sample index {i} out of range for batch of {fm.batch}")
    return FeatureMap._wrap(fm.data[i : i + 1])


def concat(maps: Sequence[FeatureMap]) -> FeatureMap:
    """Stack feature maps along the batch axis."""
    if not maps:
        raise DimensionError("nothing to concatenate")
    tail = maps[0].shape[1:]
    for m in maps:
        if m.shape[1:] != tail:
            raise DimensionError(f"cannot concatenate {m.shape} onto (*, {tail})")
    return FeatureMap._wrap(np.concatenate([m.data for m in maps], axis=0))


def take(fm: FeatureMap, index: Sequence[int] | np.ndarray) -> FeatureMap:
    """Select (and reorder) samples by index."""
    return FeatureMap._wrap(fm.data[np.asarray(index, dtype=np.intp)])


# binary fixture format: <4I header (B, C, H, W) then B*C*H*W little-endian float32

def to_bytes(fm: FeatureMap) -> bytes:
    return _HEADER.pack(*fm.shape) + fm.data.astype("<f4", copy=False).tobytes()


def from_bytes(buf: bytes) -> FeatureMap:
    if len(buf) < _HEADER.size:
        raise FormatError(f"fixture too short for header: {len(buf)} bytes")
    dims = _HEADER.unpack_from(buf)
    n = int(np.prod(dims, dtype=np.int64))
    body = len(buf) - _HEADER.size
    if body != 4 * n:
        raise FormatError(f"header {dims} expects {4 * n} payload bytes, found {body}")
    values = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size, count=n)
    try:
        return feature_map_from_values(dims, values)
    except DimensionError as exc:
        raise FormatError(str(exc)) from exc


def write_fixture(fm: FeatureMap, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(fm))


def read_fixture(path: str | Path) -> FeatureMap:
    return from_bytes(Path(path).read_bytes())
