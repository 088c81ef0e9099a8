"""Experiment runner: stream batches through a model, score them, write reports.

Config files are JSON objects with these blocks (unknown keys are rejected)::

    {
      "model": "models/proto.json",                 # optional, relative to this file
      "scenario": {"kind": "CROSSMIX", "batch_size": 64, "num_batches": 50,
                   "height": 1, "width": 1, "sample_noise": 0.5, "seed": 0,
                   "label_delta": null, "num_classes": 2,
                   "class_means": [[...], [...]],
                   "domains": [{"id": 0, "shift": [...], "scale": [...],
                                "noise_std": 0.0, "severity": 5}, ...]},
      "normalizer": {"mode": "DYN", "alpha": 0.8, "epsilon": 1e-05},
      "compare": {"modes": ["SBN", "TBN", "ALPHA_BN", "DYN"]},      # optional
      "output": {"path": "out.json", "format": "json", "include_timing": true}  # optional
    }
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cabn import Mode, NormalizerConfig
from .errors import DimensionError, FormatError, ValidationError
from .model import ModelSpec, forward_traced, load_model
from .stats import SbnStore, dispersion
from .stream import DomainSpec, DomainStream, ScenarioConfig, batch_digest

CSV_COLUMNS = ["step", "scenario", "mode", "accuracy", "clusters", "dispersion_l2", "dispersion_cos", "wall_time_s"]
REPORT_FORMATS = ("json", "csv")


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig
    normalizer: NormalizerConfig
    model_path: Path | None = None
    compare_modes: tuple[Mode, ...] = (Mode.SBN, Mode.TBN, Mode.ALPHA_BN, Mode.DYN)
    output_path: Path | None = None
    output_format: str = "json"
    include_timing: bool = True


def _keys(obj, allowed: set, required: set, where: str) -> dict:
    if not isinstance(obj, dict):
        raise FormatError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise FormatError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise FormatError(f"{where}: missing keys {sorted(missing)}")
    return obj


def _scenario_from_dict(d: dict) -> ScenarioConfig:
    _keys(d, {"kind", "batch_size", "num_batches", "height", "width", "sample_noise", "seed",
              "label_delta", "num_classes", "class_means", "domains"},
          {"kind", "class_means", "domains"}, "scenario")
    domains = []
    for i, dd in enumerate(d["domains"]):
        _keys(dd, {"id", "shift", "scale", "noise_std", "severity"}, {"id", "shift"}, f"scenario.domains[{i}]")
        shift = np.asarray(dd["shift"], dtype=np.float64)
        domains.append(DomainSpec(
            int(dd["id"]), shift, np.asarray(dd.get("scale", np.ones_like(shift)), dtype=np.float64),
            float(dd.get("noise_std", 0.0)), int(dd.get("severity", 5)),
        ))
    cfg = ScenarioConfig(
        d["kind"], tuple(domains), np.asarray(d["class_means"], dtype=np.float64),
        batch_size=int(d.get("batch_size", 64)), num_batches=int(d.get("num_batches", 50)),
        height=int(d.get("height", 1)), width=int(d.get("width", 1)),
        sample_noise=float(d.get("sample_noise", 0.5)),
        label_delta=None if d.get("label_delta") is None else float(d["label_delta"]),
        seed=int(d.get("seed", 0)),
    )
    if "num_classes" in d and int(d["num_classes"]) != cfg.num_classes:
        raise ValidationError(f"num_classes={d['num_classes']} but {cfg.num_classes} class means given")
    return cfg


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    _keys(raw, {"model", "scenario", "normalizer", "compare", "output"}, {"scenario"}, "config")
    norm = _keys(raw.get("normalizer", {}), {"mode", "alpha", "epsilon", "mix", "cluster_on_std"}, set(), "normalizer")
    normalizer = NormalizerConfig(**norm)
    cfg = ExperimentConfig(_scenario_from_dict(raw["scenario"]), normalizer)
    if "model" in raw:
        p = Path(raw["model"])
        cfg.model_path = p if p.is_absolute() or base_dir is None else base_dir / p
    if "compare" in raw:
        cmp = _keys(raw["compare"], {"modes"}, {"modes"}, "compare")
        cfg.compare_modes = tuple(Mode.parse(m) for m in cmp["modes"])
        if not cfg.compare_modes:
            raise ValidationError("compare.modes must not be empty")
    if "output" in raw:
        out = _keys(raw["output"], {"path", "format", "include_timing"}, set(), "output")
        if "path" in out:
            p = Path(out["path"])
            cfg.output_path = p if p.is_absolute() or base_dir is None else base_dir / p
        cfg.output_format = str(out.get("format", "json")).lower()
        if cfg.output_format not in REPORT_FORMATS:
            raise ValidationError(f"output.format must be one of {REPORT_FORMATS}")
        cfg.include_timing = bool(out.get("include_timing", True))
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(raw, path.parent)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    n = cfg.normalizer
    return {
        "scenario": cfg.scenario.to_dict(),
        "normalizer": {"mode": n.mode.value, "alpha": n.alpha, "epsilon": n.epsilon,
                       "mix": n.mix, "cluster_on_std": n.cluster_on_std},
    }


@dataclass
class BatchRecord:
    step: int
    scenario: str
    accuracy: float
    clusters: dict[str, int]
    dispersion_l2: float
    dispersion_cos: float
    wall_time_s: float = 0.0


@dataclass
class RunReport:
    mode: str
    scenario: str
    seed: int
    accuracy: float
    stream_digest: str
    config: dict
    records: list[BatchRecord] = field(default_factory=list)

    @property
    def mean_clusters(self) -> float:
        if not self.records:
            return 0.0
        return float(np.mean([np.mean(list(r.clusters.values())) for r in self.records]))

    def to_dict(self, include_timing: bool = True) -> dict:
        d = asdict(self)
        if not include_timing:
            for r in d["records"]:
                r.pop("wall_time_s")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        d["records"] = [BatchRecord(**r) for r in d["records"]]
        return cls(**d)


def run_experiment(model: ModelSpec, store: SbnStore, scenario: ScenarioConfig, norm: NormalizerConfig,
                   echo: dict | None = None) -> RunReport:
    """Stream every batch of ``scenario`` through ``model``; nothing carries over between batches."""
    if (scenario.channels, scenario.height, scenario.width) != model.input_dims:
        raise DimensionError(
            f"stream produces (C,H,W)=({scenario.channels},{scenario.height},{scenario.width}), "
            f"model expects {model.input_dims}"
        )
    digest = hashlib.sha256()
    records = []
    for t, batch in enumerate(DomainStream(scenario)):
        batch_digest(batch, digest)
        start = time.perf_counter()
        try:
            preds, clusters = forward_traced(model, store, batch.fm, norm)
        except DimensionError as exc:
            raise DimensionError(f"batch {t}: {exc}") from exc
        elapsed = time.perf_counter() - start
        correct = np.array([p.label for p in preds]) == batch.labels
        disp = dispersion(batch.fm)
        records.append(BatchRecord(
            step=t, scenario=scenario.scenario.value, accuracy=float(correct.mean()),
            clusters=dict(clusters), dispersion_l2=disp.l2_mean, dispersion_cos=disp.cos_dist_mean,
            wall_time_s=elapsed,
        ))
    acc = float(np.mean([r.accuracy for r in records])) if records else 0.0
    return RunReport(
        mode=norm.mode.value, scenario=scenario.scenario.value, seed=scenario.seed, accuracy=acc,
        stream_digest=digest.hexdigest(), config=echo or {}, records=records,
    )


def _resolve(model_path, config_path, seed_override=None):
    cfg = load_config(config_path)
    if seed_override is not None:
        cfg.scenario = cfg.scenario.replace(seed=int(seed_override))
    path = model_path or cfg.model_path
    if path is None:
        raise ValidationError("no model given (use --model or the config's 'model' key)")
    model, store = load_model(path)
    return cfg, model, store


def run_scenario(model_path, config_path, seed_override: int | None = None,
                 mode: str | Mode | None = None) -> RunReport:
    cfg, model, store = _resolve(model_path, config_path, seed_override)
    norm = cfg.normalizer
    if mode is not None:
        norm = NormalizerConfig(Mode.parse(mode), norm.alpha, norm.epsilon, norm.mix, norm.cluster_on_std)
    cfg.normalizer = norm
    return run_experiment(model, store, cfg.scenario, norm, config_to_dict(cfg))


@dataclass
class Comparison:
    reports: list[RunReport]

    def rows(self) -> list[dict]:
        return [
            {"mode": r.mode, "accuracy": r.accuracy, "mean_clusters": r.mean_clusters,
             "num_batches": len(r.records), "stream_digest": r.stream_digest}
            for r in self.reports
        ]

    def table(self) -> str:
        lines = [f"{'mode':<10}{'accuracy':>10}{'mean_k':>9}  stream"]
        for row in self.rows():
            lines.append(f"{row['mode']:<10}{row['accuracy']:>10.4f}{row['mean_clusters']:>9.2f}  {row['stream_digest'][:12]}")
        return "\n".join(lines)

    def to_dict(self, include_timing: bool = True) -> dict:
        return {"rows": self.rows(), "reports": [r.to_dict(include_timing) for r in self.reports]}


def compare_modes(model_path, config_path, modes: Sequence[str | Mode] | None = None,
                  seed_override: int | None = None) -> Comparison:
    """Run the same seeded stream once per mode."""
    cfg, model, store = _resolve(model_path, config_path, seed_override)
    chosen = tuple(Mode.parse(m) for m in modes) if modes else cfg.compare_modes
    base = cfg.normalizer
    reports = []
    for mode in chosen:
        norm = NormalizerConfig(mode, base.alpha, base.epsilon, base.mix, base.cluster_on_std)
        cfg.normalizer = norm
        reports.append(run_experiment(model, store, cfg.scenario, norm, config_to_dict(cfg)))
    return Comparison(reports)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def _csv_text(reports: Sequence[RunReport], include_timing: bool) -> str:
    cols = CSV_COLUMNS if include_timing else CSV_COLUMNS[:-1]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for rep in reports:
        for r in rep.records:
            row = [r.step, r.scenario, rep.mode, _fmt(r.accuracy),
                   ";".join(f"{k}={v}" for k, v in r.clusters.items()),
                   _fmt(r.dispersion_l2), _fmt(r.dispersion_cos)]
            if include_timing:
                row.append(_fmt(r.wall_time_s))
            writer.writerow(row)
    return buf.getvalue()


def render_report(report: RunReport | Comparison, fmt: str = "json", include_timing: bool = True) -> str:
    fmt = fmt.lower()
    if fmt not in REPORT_FORMATS:
        raise ValidationError(f"format must be one of {REPORT_FORMATS}, got {fmt!r}")
    if fmt == "json":
        return json.dumps(report.to_dict(include_timing), indent=2, sort_keys=True) + "\n"
    reports = report.reports if isinstance(report, Comparison) else [report]
    return _csv_text(reports, include_timing)


def export_report(report: RunReport | Comparison, path: str | Path, fmt: str = "json",
                  include_timing: bool = True) -> Path:
    path = Path(path)
    path.write_text(render_report(report, fmt, include_timing))
    return path


def read_report(path: str | Path) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text()))
