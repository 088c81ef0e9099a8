"""Ready-made models and streams for the desk-scale experiments."""
from __future__ import annotations

import numpy as np

from .cabn import DEFAULT_EPSILON
from .model import GlobalAvgPool, ModelSpec, NormSlot, PrototypeHead
from .stats import SbnStore
from .stream import DomainSpec, Scenario, ScenarioConfig
from .tensor import ChannelStats


def source_stats(class_means: np.ndarray, sample_noise: float) -> ChannelStats:
    """Exact per-channel statistics of a class-balanced clean source."""
    means = np.asarray(class_means, dtype=np.float64)
    mu = means.mean(axis=0)
    var = sample_noise**2 + means.var(axis=0)
    return ChannelStats(mu, np.sqrt(var))


def prototype_classifier(
    class_means: np.ndarray,
    sample_noise: float,
    height: int = 1,
    width: int = 1,
    epsilon: float = DEFAULT_EPSILON,
) -> tuple[ModelSpec, SbnStore]:
    """norm slot -> global average pool -> prototype head.

    Prototypes are the clean class means pushed through the slot with source
    statistics, so under SBN the head scores by agreement with each class.
    """
    means = np.asarray(class_means, dtype=np.float64)
    K, C = means.shape
    sbn = source_stats(means, sample_noise)
    protos = (means - sbn.mean) / np.sqrt(sbn.std**2 + epsilon)
    layers = (
        NormSlot("bn0", C, np.ones(C, np.float32), np.zeros(C, np.float32)),
        GlobalAvgPool(),
        PrototypeHead(protos.astype(np.float32)),
    )
    return ModelSpec((C, height, width), layers, K), SbnStore({"bn0": sbn})


def two_class_means(channels: int, separation: float) -> np.ndarray:
    """Two prototypes symmetric about the origin, the class axis spread over all channels."""
    axis = np.ones(channels) / np.sqrt(channels)
    return np.stack([-axis * separation / 2, axis * separation / 2])


def style_direction(channels: int) -> np.ndarray:
    """Unit vector orthogonal to the class axis that loads one channel heavily.

    The shift leaves the class projection intact, but it inflates channel 0's
    spread much more than the others when two opposing domains share a batch.
    """
    u = -np.ones(channels)
    u[0] = channels - 1
    return u / np.linalg.norm(u)


def crossmix_benchmark(
    seed: int = 0,
    num_batches: int = 50,
    batch_size: int = 64,
    channels: int = 8,
    separation: float = 5.0,
    sample_noise: float = 0.5,
    shift: float = 8.0,
    severity: int = 5,
) -> ScenarioConfig:
    """Two classes, two domains with opposing style shifts, every batch mixed."""
    u = style_direction(channels)
    ones = np.ones(channels)
    domains = (
        DomainSpec(0, shift * u, ones, 0.0, severity),
        DomainSpec(1, -shift * u, ones, 0.0, severity),
    )
    return ScenarioConfig(
        Scenario.CROSSMIX, domains, two_class_means(channels, separation),
        batch_size=batch_size, num_batches=num_batches, height=1, width=1,
        sample_noise=sample_noise, seed=seed,
    )


def coupling_benchmark(seed: int = 0, severity: int = 5, num_batches: int = 4, channels: int = 8) -> ScenarioConfig:
    """CROSSMIX stream whose two domains share most of their shift.

    Raising severity scales the shared shift up against the class spread, so
    instance means inside a batch line up more and more.
    """
    rng = np.random.default_rng(12345)
    common = np.abs(rng.normal(size=channels))
    common *= 6.0 / np.linalg.norm(common)
    apart = rng.normal(size=channels)
    apart *= 1.0 / np.linalg.norm(apart)
    ones = np.ones(channels)
    domains = (
        DomainSpec(0, common + apart, ones, 0.0, severity),
        DomainSpec(1, common - apart, ones, 0.0, severity),
    )
    means = rng.normal(size=(4, channels))
    return ScenarioConfig(
        Scenario.CROSSMIX, domains, means, batch_size=64, num_batches=num_batches,
        height=4, width=4, sample_noise=0.5, seed=seed,
    )


def wild_benchmark(label_delta: float, seed: int = 0, num_batches: int = 200, num_classes: int = 10, channels: int = 4) -> ScenarioConfig:
    rng = np.random.default_rng(777)
    means = rng.normal(size=(num_classes, channels)) * 3.0
    domains = tuple(
        DomainSpec(i, rng.normal(size=channels) * 4.0, np.ones(channels), 0.0, 5) for i in range(3)
    )
    return ScenarioConfig(
        Scenario.WILD, domains, means, batch_size=64, num_batches=num_batches,
        height=1, width=1, sample_noise=0.5, label_delta=label_delta, seed=seed,
    )
