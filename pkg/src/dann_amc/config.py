"""Experiment configuration: a YAML tree with one section per module.

Example::

    data:
      source: simulate        # or csv
      per_class: 200
      frame_length: 1024
      snr_db: 15.0
      k_factor: 4.0
      fading: block
      csv: {}                 # {"100MHz": {"rayleigh": path, "rician": path}} when source is csv
    experiment:
      bands: [100MHz]
      directions: [rayleigh_to_rician, rician_to_rayleigh]
      seeds: [0]
    features: {groups: [moments, cumulants, spectral]}
    train: {lr: 0.0001, batch_size: 128, epochs: 50, early_stop: target_val}
    embed: {enabled: true, per_group: 200, perplexity: 30.0, iterations: 1000}
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .features import GROUPS, FeatureSpec
from .signal import BANDS
from .train import TrainConfig
from .tsne import TsneConfig

DIRECTIONS = ("rayleigh_to_rician", "rician_to_rayleigh")
OUT_ENV = "DANN_AMC_OUT"


@dataclass
class DataConfig:
    source: str = "simulate"
    per_class: int = 200
    frame_length: int = 1024
    snr_db: float = 15.0
    k_factor: float = 4.0
    fading: str = "block"
    band_snr_offset_db: dict = field(default_factory=dict)
    label_column: str = "label"
    csv: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in ("simulate", "csv"):
            raise ValueError(f"data.source must be 'simulate' or 'csv', got {self.source!r}")
        if self.per_class < 10:
            raise ValueError("data.per_class must be >= 10")


@dataclass
class ExperimentSection:
    bands: list = field(default_factory=lambda: ["100MHz"])
    directions: list = field(default_factory=lambda: list(DIRECTIONS))
    seeds: list = field(default_factory=lambda: [0])

    def __post_init__(self):
        bad = [d for d in self.directions if d not in DIRECTIONS]
        if bad:
            raise ValueError(f"unknown directions {bad}; expected {DIRECTIONS}")
        if not self.bands or not self.directions or not self.seeds:
            raise ValueError("experiment.bands, directions and seeds must be non-empty")
        self.seeds = [int(s) for s in self.seeds]


@dataclass
class EmbedSection:
    enabled: bool = True
    per_group: int = 200
    perplexity: float = 30.0
    iterations: int = 1000

    def tsne_config(self, seed: int) -> TsneConfig:
        return TsneConfig(perplexity=self.perplexity, iterations=self.iterations, seed=seed)


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    features: dict = field(default_factory=lambda: {"groups": list(GROUPS)})
    train: dict = field(default_factory=dict)
    embed: EmbedSection = field(default_factory=EmbedSection)

    def __post_init__(self):
        self.feature_spec()
        _build(TrainConfig, self.train, "train")
        if self.data.source == "simulate":
            unknown = [b for b in self.experiment.bands if b not in BANDS]
            if unknown:
                raise ValueError(f"unknown bands {unknown}; simulated bands are {BANDS}")

    def feature_spec(self) -> FeatureSpec:
        return FeatureSpec(tuple(self.features.get("groups", GROUPS)))

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": seed})

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


_SECTIONS = {"data": DataConfig, "experiment": ExperimentSection, "embed": EmbedSection}


def _build(cls, raw: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise ValueError(f"unknown keys in {where}: {sorted(extra)}")
    return cls(**raw)


def from_dict(raw: dict | None) -> ExperimentConfig:
    raw = copy.deepcopy(raw or {})
    top = {f.name for f in fields(ExperimentConfig)}
    extra = set(raw) - top
    if extra:
        raise ValueError(f"unknown config sections: {sorted(extra)}")
    kw = {name: _build(cls, raw.get(name) or {}, name) for name, cls in _SECTIONS.items()}
    if "features" in raw:
        kw["features"] = raw["features"]
    if "train" in raw:
        kw["train"] = raw["train"] or {}
    return ExperimentConfig(**kw)


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        return from_dict(yaml.safe_load(fh))


def with_overrides(cfg: ExperimentConfig, seed=None, bands=None, directions=None) -> ExperimentConfig:
    """Apply CLI narrowing flags; the returned config is what gets written to run directories."""
    raw = cfg.to_dict()
    if seed is not None:
        raw["experiment"]["seeds"] = [int(seed)]
    if bands:
        raw["experiment"]["bands"] = list(bands)
    if directions:
        raw["experiment"]["directions"] = list(directions)
    return from_dict(raw)


def resolve_out(cli_out: str | None, env: dict) -> Path:
    if cli_out:
        return Path(cli_out)
    return Path(env.get(OUT_ENV, "runs"))
