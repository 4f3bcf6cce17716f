"""JSON pipeline configuration.

Top-level sections, all optional::

    {"dataset": {...}, "network": {...}, "training": {...},
     "detection": {...}, "evaluation": {...}, "baseline": {...}}
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..dataset import DatasetConfig
from ..errors import ConfigurationError
from ..recognizer.detection import DEFAULT_THRESHOLD
from ..recognizer.network import NetworkSpec
from ..recognizer.training import TrainConfig
from ..sprites import DESKTOP, TRAY
from .evaluation import MethodSpec, default_methods

SECTIONS = ("dataset", "network", "training", "detection", "evaluation", "baseline")


def _build(cls, d: dict, what: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigurationError(f"unknown {what} options {sorted(unknown)}")
    return cls(**d)


@dataclass
class DetectionConfig:
    threshold: float = DEFAULT_THRESHOLD
    stride: int = 4


@dataclass
class EvaluationConfig:
    epsilon: float = 8 / 255
    methods: list[MethodSpec] | None = None  # None: default grid at ``epsilon``
    positions: int = 5
    n_backgrounds: int = 5
    variant: str = DESKTOP
    tray_size: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.variant not in (TRAY, DESKTOP):
            raise ConfigurationError(f"unknown icon variant {self.variant!r}")

    def method_grid(self) -> list[MethodSpec]:
        return self.methods if self.methods is not None else default_methods(self.epsilon)


@dataclass
class BaselineConfig:
    scales: tuple[float, ...] = (1.0, 1.25, 1.5)
    trials: int = 8
    ncc_threshold: float = 0.9
    tray_size: int = 20


@dataclass
class PipelineConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    training: TrainConfig = field(default_factory=TrainConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown config sections {sorted(unknown)}")
        cfg = cls()
        if "dataset" in d:
            cfg.dataset = DatasetConfig.from_dict(d["dataset"])
        if "network" in d:
            base = cfg.network.to_dict()
            base.update(d["network"])
            try:
                cfg.network = NetworkSpec.from_dict(base)
            except (KeyError, TypeError) as exc:
                raise ConfigurationError(f"bad network spec: {exc}") from exc
        if "training" in d:
            tr = dict(d["training"])
            if "degraded_sigma" in tr:
                tr["degraded_sigma"] = tuple(tr["degraded_sigma"])
            cfg.training = TrainConfig.from_dict(tr)
        if "detection" in d:
            cfg.detection = _build(DetectionConfig, d["detection"], "detection")
        if "evaluation" in d:
            ev = dict(d["evaluation"])
            if ev.get("methods") is not None:
                ev["methods"] = [MethodSpec.make(m["method"], **m.get("params", {})) for m in ev["methods"]]
            cfg.evaluation = _build(EvaluationConfig, ev, "evaluation")
        if "baseline" in d:
            bl = dict(d["baseline"])
            if "scales" in bl:
                bl["scales"] = tuple(bl["scales"])
            cfg.baseline = _build(BaselineConfig, bl, "baseline")
        return cfg

    def with_seed(self, seed: int) -> PipelineConfig:
        """Same config with every seed set to ``seed``."""
        return dataclasses.replace(
            self,
            dataset=dataclasses.replace(self.dataset, seed=seed),
            training=dataclasses.replace(self.training, seed=seed),
            evaluation=dataclasses.replace(self.evaluation, seed=seed),
        )


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("config file must hold a JSON object")
    return PipelineConfig.from_dict(doc)
