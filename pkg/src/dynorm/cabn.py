"""Cluster-aware batch normalization and the baseline normalizers."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError, ValidationError
from .lisc import ClusterAssignment, lisc_cluster
from .stats import batch_stats
from .tensor import ChannelStats, FeatureMap

DEFAULT_ALPHA = 0.8
DEFAULT_EPSILON = 1e-5


class Mode(str, enum.Enum):
    SBN = "SBN"
    TBN = "TBN"
    IN = "IN"
    ALPHA_BN = "ALPHA_BN"
    DYN = "DYN"

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        try:
            return cls(str(value.value if isinstance(value, Mode) else value).upper())
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValidationError(f"unknown normalizer mode {value!r} (expected one of {names})") from None


@dataclass(frozen=True)
class NormalizerConfig:
    """Which statistics a norm slot uses at test time.

    ``mix="var"`` mixes variances instead of standard deviations and
    ``cluster_on_std`` adds instance stds to the clustering features; both are
    diagnostics, off by default.
    """

    mode: Mode = Mode.DYN
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    mix: str = "std"
    cluster_on_std: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must be in [0, 1], got {self.alpha}")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.mix not in ("std", "var"):
            raise ValidationError(f"mix must be 'std' or 'var', got {self.mix!r}")


@dataclass(frozen=True)
class NormLayerState:
    sbn: ChannelStats
    gamma: np.ndarray
    beta: np.ndarray
    config: NormalizerConfig = field(default_factory=NormalizerConfig)

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=np.float64).ravel()
        beta = np.asarray(self.beta, dtype=np.float64).ravel()
        C = self.sbn.channels
        if gamma.size != C or beta.size != C:
            raise DimensionError(f"gamma/beta must have {C} entries, got {gamma.size}/{beta.size}")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)

    @property
    def channels(self) -> int:
        return self.sbn.channels

    @classmethod
    def identity(cls, sbn: ChannelStats, config: NormalizerConfig | None = None) -> "NormLayerState":
        C = sbn.channels
        return cls(sbn, np.ones(C), np.zeros(C), config or NormalizerConfig())


def tcn_stats(fm: FeatureMap, clusters: ClusterAssignment, cluster_id: int) -> ChannelStats:
    members = clusters.members(cluster_id)
    mean, std = kernels.group_stats(fm.data[members], np.zeros(members.size, dtype=np.intp), 1)
    return ChannelStats(mean[0], std[0])


def _mix(sbn_mean, sbn_std, mean, std, alpha, mix="std"):
    m = alpha * sbn_mean + (1.0 - alpha) * mean
    if mix == "var":
        s = np.sqrt(alpha * sbn_std**2 + (1.0 - alpha) * std**2)
    else:
        s = alpha * sbn_std + (1.0 - alpha) * std
    return m, s


def mix_stats(sbn: ChannelStats, tcn: ChannelStats, alpha: float, mix: str = "std") -> ChannelStats:
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must be in [0, 1], got {alpha}")
    if sbn.channels != tcn.channels:
        raise DimensionError(f"channel mismatch: {sbn.channels} vs {tcn.channels}")
    return ChannelStats(*_mix(sbn.mean, sbn.std, tcn.mean, tcn.std, alpha, mix))


def _check_channels(fm: FeatureMap, C: int) -> None:
    if fm.channels != C:
        raise DimensionError(f"feature map has {fm.channels} channels, statistics have {C}")


def normalize_with_stats(fm: FeatureMap, stats: ChannelStats, gamma, beta, epsilon: float = DEFAULT_EPSILON) -> FeatureMap:
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be > 0, got {epsilon}")
    _check_channels(fm, stats.channels)
    gamma = np.asarray(gamma, dtype=np.float64).ravel()
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if gamma.size != stats.channels or beta.size != stats.channels:
        raise DimensionError("gamma/beta length must match the channel count")
    out = kernels.group_normalize(
        fm.data, np.zeros(fm.batch, dtype=np.intp),
        stats.mean[None, :], stats.std[None, :], gamma, beta, float(epsilon),
    )
    return FeatureMap._wrap(out)


def _grouped(fm: FeatureMap, labels: np.ndarray, k: int, state: NormLayerState, alpha: float) -> FeatureMap:
    mean, std = kernels.group_stats(fm.data, labels, k)
    if alpha > 0.0:
        mean, std = _mix(state.sbn.mean[None, :], state.sbn.std[None, :], mean, std, alpha, state.config.mix)
    out = kernels.group_normalize(fm.data, labels, mean, std, state.gamma, state.beta, state.config.epsilon)
    return FeatureMap._wrap(out)


def normalize_cabn(fm: FeatureMap, clusters: ClusterAssignment, state: NormLayerState) -> FeatureMap:
    """Normalize every cluster with SBN mixed into its own TCN statistics."""
    _check_channels(fm, state.channels)
    if clusters.labels.size != fm.batch:
        raise DimensionError(f"cluster labels cover {clusters.labels.size} samples, batch has {fm.batch}")
    return _grouped(fm, np.ascontiguousarray(clusters.labels), clusters.k, state, state.config.alpha)


def normalize(fm: FeatureMap, state: NormLayerState, clusters: ClusterAssignment | None = None) -> FeatureMap:
    """Apply the normalizer selected by ``state.config.mode``.

    For DYN, a precomputed ``clusters`` may be passed; otherwise LISC runs on ``fm``.
    """
    _check_channels(fm, state.channels)
    cfg = state.config
    mode = cfg.mode
    B = fm.batch
    if mode is Mode.SBN:
        return normalize_with_stats(fm, state.sbn, state.gamma, state.beta, cfg.epsilon)
    if mode is Mode.TBN:
        return normalize_with_stats(fm, batch_stats(fm), state.gamma, state.beta, cfg.epsilon)
    if mode is Mode.ALPHA_BN:
        mixed = mix_stats(state.sbn, batch_stats(fm), cfg.alpha, cfg.mix)
        return normalize_with_stats(fm, mixed, state.gamma, state.beta, cfg.epsilon)
    if mode is Mode.IN:
        return _grouped(fm, np.arange(B, dtype=np.intp), B, state, 0.0)
    if clusters is None:
        clusters = lisc_cluster(fm, with_std=cfg.cluster_on_std)
    return normalize_cabn(fm, clusters, state)
