"""Run configuration: a YAML tree mapped onto dataclasses."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .diffusion import DiffusionConfig
from .enhance import EnhanceConfig
from .harness.classifiers import ClassifierConfig
from .traces import DatasetSpec, SplitSpec

ROOT_ENV = "TRAFFICDIFF_ROOT"


@dataclass
class DatasetEntry:
    dataset_id: str
    target_length: int
    num_classes: int = 2
    traces_per_class: int = 10
    bin_width: float | None = None
    feature: str = "bytes"
    source: str = "toy"  # "toy" or a directory in the CSV layout
    traffic_type: str | None = None
    platform: str | None = None
    anomaly_classes: list[int] = field(default_factory=list)

    def spec(self) -> DatasetSpec:
        return DatasetSpec(self.dataset_id, self.target_length, self.num_classes,
                           self.traces_per_class, self.bin_width, self.feature,
                           tuple(self.anomaly_classes))


@dataclass
class SamplingConfig:
    count_per_class: int = 80


@dataclass
class FidelityConfig:
    embedder: str = "pixel"
    n: int | None = None
    histogram_bins: int = 32


@dataclass
class RunConfig:
    seed: int = 0
    artifact_root: str = "artifacts"
    datasets: list[DatasetEntry] = field(default_factory=list)
    split: SplitSpec = field(default_factory=SplitSpec)
    enhance: EnhanceConfig = field(default_factory=EnhanceConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    fidelity: FidelityConfig = field(default_factory=FidelityConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    classifier_kind: str = "conv2d"
    experiments: dict[str, dict[str, Any]] = field(default_factory=dict)

    def dataset(self, dataset_id: str) -> DatasetEntry:
        for d in self.datasets:
            if d.dataset_id == dataset_id:
                return d
        raise KeyError(f"dataset {dataset_id!r} not in config")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["diffusion"] = self.diffusion.to_dict()
        return d

    def section_hash(self, *names: str) -> str:
        full = self.to_dict()
        return digest({n: full[n] for n in names})

    def root(self, override: str | None = None) -> Path:
        return Path(override or os.environ.get(ROOT_ENV) or self.artifact_root)


def digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def stage_seed(seed: int, stage: str) -> int:
    """Stable per-stage seed so stages never share a random stream by accident."""
    h = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(h[:4], "little") & 0x7FFFFFFF


def _build(cls, data: dict | None):
    if data is None:
        return cls()
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} key(s): {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    sections = {
        "split": SplitSpec, "enhance": EnhanceConfig, "diffusion": DiffusionConfig,
        "sampling": SamplingConfig, "fidelity": FidelityConfig, "classifier": ClassifierConfig,
    }
    kw = {k: _build(cls, data.pop(k, None)) for k, cls in sections.items()}
    kw["datasets"] = [_build(DatasetEntry, d) for d in data.pop("datasets", [])]
    cfg = _build(RunConfig, {**data, **kw})
    ids = [d.dataset_id for d in cfg.datasets]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate dataset ids in config")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        return config_from_dict(yaml.safe_load(fh) or {})
