"""Run configuration: loss weights, stage schedules, solver knobs.

Defaults follow the published schedules (human stage Adam 2e-3 x 100,
object fitting 2e-3 x 200, joint 3e-4 x 500, 7x7 edge filter, IOU > 0.3).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ConfigError


def _check(cond, name, rng):
    if not cond:
        raise ConfigError(f"{name} out of range: must be {rng}")


@dataclass(frozen=True)
class LossWeights:
    collision: float = 1.0
    depth: float = 1.0
    interaction: float = 1.0
    silhouette: float = 1.0

    def validate(self, prefix="weights"):
        for f in fields(self):
            v = getattr(self, f.name)
            _check(isinstance(v, (int, float)) and v >= 0, f"{prefix}.{f.name}", ">= 0")

    def as_tuple(self):
        return (self.collision, self.depth, self.interaction, self.silhouette)


@dataclass(frozen=True)
class StageConfig:
    """One Adam schedule.

    The ``*_unit`` fields set what one unit of the optimizer's parameter
    vector means: translation increments are fractions of the instance's
    initial depth, rotation increments are ``rotation_unit`` radians.
    """

    stage: str = "human"
    lr: float = 2e-3
    iterations: int = 100
    fd_step: float = 1e-3
    restarts: int = 1
    translation_unit: float = 1.0
    rotation_unit: float = 1.0
    scale_unit: float = 1.0
    optimize_rotation: bool = False

    def validate(self, prefix="stage"):
        _check(self.stage in ("human", "object", "joint"), f"{prefix}.stage", "one of human/object/joint")
        _check(self.lr > 0, f"{prefix}.lr", "> 0")
        _check(isinstance(self.iterations, int) and self.iterations > 0, f"{prefix}.iterations", "an integer > 0")
        _check(self.fd_step > 0, f"{prefix}.fd_step", "> 0")
        _check(isinstance(self.restarts, int) and self.restarts >= 1, f"{prefix}.restarts", "an integer >= 1")
        for name in ("translation_unit", "rotation_unit", "scale_unit"):
            _check(getattr(self, name) > 0, f"{prefix}.{name}", "> 0")


def default_human_stage():
    return StageConfig("human", lr=2e-3, iterations=100)


def default_object_stage():
    return StageConfig("object", lr=2e-3, iterations=200, restarts=8, translation_unit=4.0,
                       rotation_unit=4.0, optimize_rotation=True)


def default_joint_stage():
    return StageConfig("joint", lr=3e-4, iterations=500, rotation_unit=2.0, optimize_rotation=True)


@dataclass(frozen=True)
class RunConfig:
    delta: float = 0.5
    focal: float = 1000.0
    grid_resolution: int = 64
    grid_padding: float | None = None
    interaction_padding: float = 0.0
    human_weights: LossWeights = field(default_factory=LossWeights)
    hoi_weights: LossWeights = field(default_factory=LossWeights)
    human_stage: StageConfig = field(default_factory=default_human_stage)
    object_stage: StageConfig = field(default_factory=default_object_stage)
    joint_stage: StageConfig = field(default_factory=default_joint_stage)
    soft_width: float = 2.0
    edge_filter: int = 7
    chamfer_symmetric: bool = False
    chamfer_reduction: str = "normalized"
    chamfer_weight: float = 0.3
    iou_threshold: float = 0.3
    subset_cap: int = 16
    provider: str = "oracle"
    endpoint: str | None = None
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        _check(0 < self.delta < 1, "delta", "in (0, 1)")
        _check(self.focal > 0, "focal", "> 0")
        _check(isinstance(self.grid_resolution, int) and self.grid_resolution >= 8, "grid_resolution", "an integer >= 8")
        _check(self.grid_padding is None or self.grid_padding > 0, "grid_padding", "> 0 or null")
        _check(self.interaction_padding >= 0, "interaction_padding", ">= 0")
        self.human_weights.validate("human_weights")
        self.hoi_weights.validate("hoi_weights")
        self.human_stage.validate("human_stage")
        self.object_stage.validate("object_stage")
        self.joint_stage.validate("joint_stage")
        _check(self.soft_width >= 0, "soft_width", ">= 0")
        _check(isinstance(self.edge_filter, int) and self.edge_filter >= 3 and self.edge_filter % 2 == 1,
               "edge_filter", "an odd integer >= 3")
        _check(self.chamfer_reduction in ("normalized", "sum"), "chamfer_reduction", "one of normalized/sum")
        _check(self.chamfer_weight >= 0, "chamfer_weight", ">= 0")
        _check(0 <= self.iou_threshold <= 1, "iou_threshold", "in [0, 1]")
        _check(isinstance(self.subset_cap, int) and self.subset_cap >= 1, "subset_cap", "an integer >= 1")
        _check(self.provider in ("oracle", "remote", "none"), "provider", "one of oracle/remote/none")
        _check(isinstance(self.seed, int), "seed", "an integer")

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, overrides: dict | None) -> "RunConfig":
        if not overrides:
            return self
        return _merge(self, overrides, "")


_NESTED = {"human_weights": LossWeights, "hoi_weights": LossWeights,
           "human_stage": StageConfig, "object_stage": StageConfig, "joint_stage": StageConfig}


def _merge(obj, overrides: dict, prefix: str):
    names = {f.name for f in fields(obj)}
    changes = {}
    for key, val in overrides.items():
        if key not in names:
            raise ConfigError(f"unknown config field {prefix}{key}")
        cur = getattr(obj, key)
        if key in _NESTED and isinstance(val, dict):
            changes[key] = _merge(cur, val, f"{prefix}{key}.")
        else:
            if isinstance(cur, float) and isinstance(val, int) and not isinstance(val, bool):
                val = float(val)
            changes[key] = val
    try:
        return replace(obj, **changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def read_overrides(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        data = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse config ({exc})") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return data


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = cfg.with_overrides(read_overrides(path))
    return cfg.with_overrides(overrides)
