"""Layer-wise instance statistics clustering.

Each sample is linked to its first neighbour (the most cosine-similar other
sample, judged on instance means). Two samples share a cluster when one is the
other's first neighbour or both have the same first neighbour; clusters are the
connected components of that graph. One partition is computed per call; there is
no recursion to coarser levels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DegenerateBatchError, DimensionError
from .stats import cosine_similarity, instance_means
from .tensor import FeatureMap

__all__ = [
    "ClusterAssignment",
    "adjacency_matrix",
    "connected_components",
    "cosine_similarity",
    "first_neighbors",
    "lisc_cluster",
]


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.intp).ravel()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def members(self, cluster_id: int) -> np.ndarray:
        if not 0 <= cluster_id < self.k:
            raise IndexError(f"cluster {cluster_id} out of range for k={self.k}")
        return np.flatnonzero(self.labels == cluster_id)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def partition(self) -> frozenset[frozenset[int]]:
        """Cluster ids stripped: the set of member sets."""
        return frozenset(frozenset(self.members(c).tolist()) for c in range(self.k))


def first_neighbors(means: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    mu = np.asarray(means, dtype=np.float64)
    if mu.ndim != 2:
        raise DimensionError(f"expected a (B, C) array of means, got shape {mu.shape}")
    if mu.shape[0] < 2:
        raise DegenerateBatchError("first neighbours need at least two samples")
    return kernels.first_neighbors(np.ascontiguousarray(mu))


def adjacency_matrix(n1: Sequence[int] | np.ndarray) -> np.ndarray:
    n1 = np.asarray(n1, dtype=np.intp)
    B = n1.size
    if B and (n1.min() < 0 or n1.max() >= B):
        raise DimensionError("first-neighbour indices must lie in [0, B)")
    idx = np.arange(B)
    adj = (
        (n1[:, None] == idx[None, :])
        | (n1[None, :] == idx[:, None])
        | (n1[:, None] == n1[None, :])
    )
    np.fill_diagonal(adj, False)
    return adj


def connected_components(adj: np.ndarray) -> ClusterAssignment:
    adj = np.asarray(adj, dtype=bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise DimensionError(f"adjacency must be square, got {adj.shape}")
    labels, k = kernels.components(adj)
    return ClusterAssignment(labels, k)


def lisc_cluster(fm: FeatureMap, with_std: bool = False) -> ClusterAssignment:
    """Cluster the batch on instance means.

    ``with_std`` appends the instance std vector to each sample's features
    (experimental; not the default behaviour).
    """
    if fm.batch == 1:
        return ClusterAssignment(np.zeros(1, dtype=np.intp), 1)
    feats = instance_means(fm)
    if with_std:
        B = fm.batch
        _, std = kernels.group_stats(fm.data, np.arange(B, dtype=np.intp), B)
        feats = np.concatenate([feats, std], axis=1)
    n1 = first_neighbors(feats)
    return connected_components(adjacency_matrix(n1))
