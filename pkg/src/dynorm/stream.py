"""Synthetic dynamic-domain test streams.

Clean samples are class prototypes plus Gaussian noise. A domain corrupts them
with a per-channel affine map plus noise, whose strength grows linearly with
severity (1..5). Four stream kinds decide how domains mix inside and across
batches:

* CROSSMIX - every batch is split across all domains.
* RANDOM   - each batch is, with probability 0.5, single-domain or mixed.
* SHUFFLE  - every batch is single-domain; the domain cycles batch to batch.
* WILD     - RANDOM composition plus Dirichlet label shift per batch.
"""
from __future__ import annotations

import csv
import enum
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, ValidationError
from .tensor import FeatureMap, write_fixture

RANDOM_SWITCH_PROB = 0.5
MAX_SEVERITY = 5


class Scenario(str, enum.Enum):
    CROSSMIX = "CROSSMIX"
    RANDOM = "RANDOM"
    SHUFFLE = "SHUFFLE"
    WILD = "WILD"

    @classmethod
    def parse(cls, value: "str | Scenario") -> "Scenario":
        try:
            return cls(str(value.value if isinstance(value, Scenario) else value).upper())
        except ValueError:
            raise ValidationError(f"unknown scenario {value!r}") from None


@dataclass(frozen=True, eq=False)
class DomainSpec:
    id: int
    shift: np.ndarray
    scale: np.ndarray
    noise_std: float = 0.0
    severity: int = MAX_SEVERITY

    def __post_init__(self):
        shift = np.asarray(self.shift, dtype=np.float64).ravel()
        scale = np.asarray(self.scale, dtype=np.float64).ravel()
        if shift.shape != scale.shape:
            raise DimensionError(f"domain {self.id}: shift and scale lengths differ")
        if (scale <= 0).any():
            raise ValidationError(f"domain {self.id}: scale entries must be > 0")
        if self.noise_std < 0:
            raise ValidationError(f"domain {self.id}: noise_std must be >= 0")
        if self.severity not in range(1, MAX_SEVERITY + 1):
            raise ValidationError(f"domain {self.id}: severity must be in 1..{MAX_SEVERITY}, got {self.severity}")
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def identity(cls, id: int, channels: int) -> "DomainSpec":
        return cls(id, np.zeros(channels), np.ones(channels))

    def with_severity(self, severity: int) -> "DomainSpec":
        return DomainSpec(self.id, self.shift, self.scale, self.noise_std, severity)

    def effective(self) -> tuple[np.ndarray, np.ndarray]:
        """Shift and scale after applying severity/5 to their magnitudes."""
        f = self.severity / MAX_SEVERITY
        return self.shift * f, 1.0 + (self.scale - 1.0) * f

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
            "noise_std": self.noise_std,
            "severity": self.severity,
        }


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    scenario: Scenario
    domains: tuple[DomainSpec, ...]
    class_means: np.ndarray  # (num_classes, C)
    batch_size: int = 64
    num_batches: int = 50
    height: int = 1
    width: int = 1
    sample_noise: float = 0.5
    label_delta: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        object.__setattr__(self, "domains", tuple(self.domains))
        means = np.asarray(self.class_means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 1:
            raise DimensionError("class_means must be a non-empty (num_classes, C) array")
        object.__setattr__(self, "class_means", means)
        if not self.domains:
            raise ValidationError("at least one domain is required")
        for d in self.domains:
            if d.shift.size != means.shape[1]:
                raise DimensionError(f"domain {d.id} has {d.shift.size} channels, class means have {means.shape[1]}")
        ids = [d.id for d in self.domains]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"domain ids must be unique, got {ids}")
        if self.batch_size < 1 or self.num_batches < 0 or self.height < 1 or self.width < 1:
            raise ValidationError("batch_size, height, width must be >= 1 and num_batches >= 0")
        if self.sample_noise < 0:
            raise ValidationError("sample_noise must be >= 0")
        if self.scenario is Scenario.CROSSMIX:
            if len(self.domains) < 2:
                raise ValidationError("CROSSMIX needs at least two domains")
            if self.batch_size < 2:
                raise ValidationError("CROSSMIX needs batch_size >= 2")
        if self.scenario is Scenario.WILD and not (self.label_delta is not None and self.label_delta > 0):
            raise ValidationError("WILD needs label_delta > 0")
        if self.label_delta is not None and self.label_delta <= 0:
            raise ValidationError("label_delta must be > 0")

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def channels(self) -> int:
        return self.class_means.shape[1]

    def replace(self, **changes) -> "ScenarioConfig":
        fields = dict(
            scenario=self.scenario, domains=self.domains, class_means=self.class_means,
            batch_size=self.batch_size, num_batches=self.num_batches, height=self.height,
            width=self.width, sample_noise=self.sample_noise, label_delta=self.label_delta, seed=self.seed,
        )
        fields.update(changes)
        return ScenarioConfig(**fields)

    def to_dict(self) -> dict:
        return {
            "kind": self.scenario.value,
            "batch_size": self.batch_size,
            "num_batches": self.num_batches,
            "height": self.height,
            "width": self.width,
            "sample_noise": self.sample_noise,
            "label_delta": self.label_delta,
            "seed": self.seed,
            "class_means": self.class_means.tolist(),
            "domains": [d.to_dict() for d in self.domains],
        }


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    fm: FeatureMap
    labels: np.ndarray
    domain_ids: np.ndarray

    def __post_init__(self):
        if len(self.labels) != self.fm.batch or len(self.domain_ids) != self.fm.batch:
            raise DimensionError("labels and domain_ids must have one entry per sample")


def step_rng(seed: int, t: int) -> np.random.Generator:
    """Independent generator for batch ``t`` of a stream seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(t)]))


def _clean(class_means: np.ndarray, labels: np.ndarray, noise: float, H: int, W: int, rng) -> np.ndarray:
    base = class_means[labels][:, :, None, None]
    eps = rng.standard_normal((labels.size, class_means.shape[1], H, W))
    return base + noise * eps


def sample_clean(cfg: ScenarioConfig, c: int, rng: np.random.Generator) -> FeatureMap:
    """One (1, C, H, W) clean sample of class ``c``."""
    if not 0 <= c < cfg.num_classes:
        raise IndexError(f"class {c} out of range for {cfg.num_classes} classes")
    return FeatureMap(_clean(cfg.class_means, np.array([c]), cfg.sample_noise, cfg.height, cfg.width, rng))


def _corrupt(x: np.ndarray, domain: DomainSpec, rng) -> np.ndarray:
    shift, scale = domain.effective()
    out = scale[None, :, None, None] * x + shift[None, :, None, None]
    if domain.noise_std > 0:
        out = out + domain.noise_std * rng.standard_normal(x.shape)
    return out


def corrupt(sample: FeatureMap, domain: DomainSpec, rng: np.random.Generator | None = None) -> FeatureMap:
    if sample.channels != domain.shift.size:
        raise DimensionError(f"sample has {sample.channels} channels, domain {domain.id} has {domain.shift.size}")
    if rng is None:
        rng = np.random.default_rng(0)
    return FeatureMap(_corrupt(sample.data.astype(np.float64), domain, rng))


def split_counts(total: int, parts: int) -> list[int]:
    """Near-equal split; the remainder goes to the lowest indices."""
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _mixed(n_domains: int, B: int, rng) -> np.ndarray:
    idx = np.repeat(np.arange(n_domains), split_counts(B, n_domains))
    return idx[rng.permutation(B)]


def domain_assignment(cfg: ScenarioConfig, t: int, rng: np.random.Generator) -> np.ndarray:
    """Index into ``cfg.domains`` for every sample of batch ``t``."""
    n, B = len(cfg.domains), cfg.batch_size
    kind = cfg.scenario
    if kind is Scenario.CROSSMIX:
        return _mixed(n, B, rng)
    if kind is Scenario.SHUFFLE:
        return np.full(B, t % n, dtype=np.intp)
    # RANDOM and WILD
    if rng.random() < RANDOM_SWITCH_PROB:
        return np.full(B, rng.integers(n), dtype=np.intp)
    return _mixed(n, B, rng)


def draw_labels(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    K, B = cfg.num_classes, cfg.batch_size
    if cfg.scenario is Scenario.WILD:
        weights = rng.dirichlet(np.full(K, cfg.label_delta))
        return rng.choice(K, size=B, p=weights / weights.sum()).astype(np.intp)
    return rng.integers(0, K, size=B).astype(np.intp)


def next_batch(cfg: ScenarioConfig, t: int, rng: np.random.Generator | None = None) -> LabeledBatch:
    if not 0 <= t < cfg.num_batches:
        raise IndexError(f"step {t} out of range for {cfg.num_batches} batches")
    if rng is None:
        rng = step_rng(cfg.seed, t)
    which = domain_assignment(cfg, t, rng)
    labels = draw_labels(cfg, rng)
    x = _clean(cfg.class_means, labels, cfg.sample_noise, cfg.height, cfg.width, rng)
    for d_idx, domain in enumerate(cfg.domains):
        sel = which == d_idx
        if sel.any():
            x[sel] = _corrupt(x[sel], domain, rng)
    ids = np.array([cfg.domains[i].id for i in which], dtype=np.intp)
    return LabeledBatch(FeatureMap(x), labels, ids)


class DomainStream:
    """Sequential iterator over a scenario's batches."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self._t = 0

    def __iter__(self) -> Iterator[LabeledBatch]:
        return self

    def __next__(self) -> LabeledBatch:
        if self._t >= self.cfg.num_batches:
            raise StopIteration
        batch = next_batch(self.cfg, self._t)
        self._t += 1
        return batch

    def __len__(self) -> int:
        return self.cfg.num_batches


def batch_digest(batch: LabeledBatch, h=None):
    h = h or hashlib.sha256()
    h.update(batch.fm.data.astype("<f4").tobytes())
    h.update(np.asarray(batch.labels, dtype="<i8").tobytes())
    h.update(np.asarray(batch.domain_ids, dtype="<i8").tobytes())
    return h


def stream_digest(cfg: ScenarioConfig) -> str:
    h = hashlib.sha256()
    for batch in DomainStream(cfg):
        batch_digest(batch, h)
    return h.hexdigest()


def label_entropy(labels: Sequence[int], num_classes: int) -> float:
    """Shannon entropy (nats) of the empirical label distribution."""
    p = np.bincount(np.asarray(labels), minlength=num_classes) / len(labels)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def export_stream(cfg: ScenarioConfig, out_dir: str | Path) -> list[Path]:
    """Write each batch as a binary fixture plus ``labels.csv`` (step, index, label, domain)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "index", "label", "domain"])
        for t, batch in enumerate(DomainStream(cfg)):
            path = out / f"batch_{t:04d}.bin"
            write_fixture(batch.fm, path)
            written.append(path)
            for i, (y, d) in enumerate(zip(batch.labels, batch.domain_ids)):
                writer.writerow([t, i, int(y), int(d)])
    written.append(out / "labels.csv")
    return written
