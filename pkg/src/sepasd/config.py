"""Experiment configuration: one YAML file with nested sections, every experiment constant explicit."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .dataset import SynthSpec
from .dsp import MixConfig, StftConfig
from .model import SeparatorConfig, config_from_dict
from .scoring import AGGREGATIONS
from .training import LossWeights, TrainConfig


@dataclass(frozen=True)
class DatasetConfig:
    manifest: str | None = None
    synth: SynthSpec | None = None

    def __post_init__(self):
        if (self.manifest is None) == (self.synth is None):
            raise ValueError("dataset needs exactly one of 'manifest' or 'synth'")


@dataclass(frozen=True)
class ScoringConfig:
    ridge_rel: float = 1e-6
    aggregation: str = "mean"
    segment_seconds: float = 2.0

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"scoring.aggregation must be one of {AGGREGATIONS}")


@dataclass(frozen=True)
class EvalConfig:
    max_fpr: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    stft: StftConfig = field(default_factory=StftConfig)
    mix: MixConfig = field(default_factory=MixConfig)
    model: SeparatorConfig = field(default_factory=SeparatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out_dir: str = "runs"
    seed: int = 0

    def with_out_dir(self, out_dir: str | os.PathLike) -> "ExperimentConfig":
        return dataclasses.replace(self, out_dir=str(Path(out_dir).resolve()))

    def train_config(self, machine: str, mode: str, nontarget: list[str]) -> TrainConfig:
        return dataclasses.replace(self.train, mode=mode, target_class=machine, nontarget_classes=tuple(nontarget))

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        for key in ("tone_band", "machine_types"):
            if d["dataset"]["synth"] is not None:
                d["dataset"]["synth"][key] = list(d["dataset"]["synth"][key])
        d["model"]["tap_blocks"] = list(d["model"]["tap_blocks"])
        d["train"]["nontarget_classes"] = list(d["train"]["nontarget_classes"])
        return d

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


_SECTIONS = {"dataset", "stft", "mix", "model", "train", "scoring", "eval", "out_dir", "seed"}


def _only(section: str, d: dict, cls) -> dict:
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return d


def config_from_mapping(raw: dict[str, Any] | None, base_dir: str | os.PathLike = ".") -> ExperimentConfig:
    """Build a config from parsed YAML; the top-level seed overrides every component seed."""
    raw = dict(raw or {})
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    seed = int(raw.get("seed", 0))
    base_dir = Path(base_dir)

    ds = dict(raw.get("dataset") or {"synth": {}})
    _only("dataset", ds, DatasetConfig)
    manifest = ds.get("manifest")
    if manifest is not None:
        manifest = str((base_dir / manifest).resolve())
    synth = None
    if ds.get("synth") is not None:
        sd = _only("dataset.synth", dict(ds["synth"]), SynthSpec)
        sd["seed"] = seed
        synth = SynthSpec(**sd)
    dataset = DatasetConfig(manifest, synth)

    mix = MixConfig(**_only("mix", dict(raw.get("mix") or {}), MixConfig))
    md = _only("model", dict(raw.get("model") or {}), SeparatorConfig)
    md["seed"] = seed
    td = _only("train", dict(raw.get("train") or {}), TrainConfig)
    if "loss" in td:
        td["loss"] = LossWeights(**_only("train.loss", dict(td["loss"]), LossWeights))
    td["seed"] = seed
    td["delta_db"] = mix.delta_db
    td.setdefault("nontarget_classes", ())
    td["nontarget_classes"] = tuple(td["nontarget_classes"] or ())
    out_dir = raw.get("out_dir", "runs")
    return ExperimentConfig(
        dataset=dataset,
        stft=StftConfig(**_only("stft", dict(raw.get("stft") or {}), StftConfig)),
        mix=mix,
        model=config_from_dict(md),
        train=TrainConfig(**td),
        scoring=ScoringConfig(**_only("scoring", dict(raw.get("scoring") or {}), ScoringConfig)),
        eval=EvalConfig(**_only("eval", dict(raw.get("eval") or {}), EvalConfig)),
        out_dir=str(Path(out_dir).resolve()),
        seed=seed,
    )


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return config_from_mapping(raw, path.resolve().parent)
