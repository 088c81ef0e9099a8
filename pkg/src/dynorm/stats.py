"""Instance, batch and source statistics, plus the IN-vs-TBN dispersion diagnostic."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import kernels
from .errors import DimensionError
from .tensor import ChannelStats, FeatureMap

ZERO_NORM = 1e-12


def _check_index(fm: FeatureMap, i: int) -> None:
    if not 0 <= i < fm.batch:
        raise IndexError(f"sample index {i} out of range for batch of {fm.batch}")


def instance_means(fm: FeatureMap) -> np.ndarray:
    """(B, C) array of per-sample spatial means."""
    return kernels.instance_means(fm.data)


def instance_mean(fm: FeatureMap, i: int) -> np.ndarray:
    _check_index(fm, i)
    return kernels.instance_means(fm.data[i : i + 1])[0]


def instance_stats(fm: FeatureMap, i: int) -> ChannelStats:
    """Mean and population std of sample ``i`` over its H*W positions."""
    _check_index(fm, i)
    mean, std = kernels.group_stats(fm.data[i : i + 1], np.zeros(1, dtype=np.intp), 1)
    return ChannelStats(mean[0], std[0])


def batch_stats(fm: FeatureMap) -> ChannelStats:
    """Per-channel mean and population std over all B*H*W elements."""
    mean, std = kernels.group_stats(fm.data, np.zeros(fm.batch, dtype=np.intp), 1)
    return ChannelStats(mean[0], std[0])


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError(f"vectors differ in length: {u.size} vs {v.size}")
    nu = float(np.sqrt(np.dot(u, u)))
    nv = float(np.sqrt(np.dot(v, v)))
    if nu < ZERO_NORM or nv < ZERO_NORM:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


@dataclass(frozen=True)
class DispersionReport:
    l2_mean: float
    cos_dist_mean: float


def dispersion(fm: FeatureMap, use_std: bool = False) -> DispersionReport:
    """Average distance between each sample's IN statistics and the TBN statistics.

    By default compares mean vectors. ``use_std=True`` compares the std vectors
    instead (diagnostic only).
    """
    if use_std:
        B = fm.batch
        _, per_sample = kernels.group_stats(fm.data, np.arange(B, dtype=np.intp), B)
        target = batch_stats(fm).std
    else:
        per_sample = instance_means(fm)
        target = batch_stats(fm).mean
    l2 = np.sqrt(((per_sample - target[None, :]) ** 2).sum(axis=1))
    # rounding can push cosine a hair past +-1
    cos = np.clip([1.0 - cosine_similarity(row, target) for row in per_sample], 0.0, 2.0)
    return DispersionReport(l2_mean=float(l2.mean()), cos_dist_mean=float(cos.mean()))


def mean_pairwise_cosine(fm: FeatureMap) -> float:
    """Mean cosine similarity of instance means over all unordered sample pairs."""
    B = fm.batch
    if B < 2:
        return 1.0
    sim = kernels.cosine_matrix(instance_means(fm))
    iu = np.triu_indices(B, 1)
    return float(sim[iu].mean())


class SbnStore(Mapping[str, ChannelStats]):
    """Frozen source statistics, one :class:`ChannelStats` per norm slot id."""

    def __init__(self, slots: Mapping[str, ChannelStats]):
        self._slots = dict(slots)

    def __getitem__(self, slot_id: str) -> ChannelStats:
        return self._slots[slot_id]

    def __iter__(self):
        return iter(self._slots)

    def __len__(self) -> int:
        return len(self._slots)

    def __repr__(self) -> str:
        return f"SbnStore({list(self._slots)})"


def load_sbn(path: str | Path) -> SbnStore:
    """Read the source statistics stored alongside a model manifest."""
    from .model import load_model

    return load_model(path)[1]
