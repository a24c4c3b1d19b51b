"""Experiment configuration: JSON in, validated dataclasses out.

Unknown keys are rejected at every level.  ``to_dict`` produces the fully
resolved form written next to every run's outputs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import netcore
from .errors import ConfigError
from .trainer import DRWI, SRWI, SeedPolicy, TrainConfig


@dataclass
class NetworkConfig:
    kind: str = "dense"
    hidden: list = field(default_factory=lambda: [64, 64])
    channels: list = field(default_factory=lambda: [32, 64, 64])
    dense_width: int = 64
    reg_rate: float = 0.01

    def validate(self):
        if self.kind not in ("dense", "lenet"):
            raise ConfigError(f"network.kind must be 'dense' or 'lenet', got {self.kind!r}")
        if self.reg_rate <= 0:
            raise ConfigError("network.reg_rate must be positive (it is the spectrum floor)")
        if len(self.channels) != 3:
            raise ConfigError("network.channels needs exactly three conv widths")

    def build(self, input_shape, num_classes):
        if self.kind == "dense":
            n_in = 1
            for s in input_shape:
                n_in *= s
            spec = netcore.dense_spec(n_in, self.hidden, num_classes, self.reg_rate)
            return spec
        return netcore.lenet_spec(input_shape, num_classes, tuple(self.channels), self.dense_width, self.reg_rate)


@dataclass
class DataConfig:
    source: str = "synthetic"
    classes: int = 4
    train_per_class: int = 500
    test_per_class: int = 125
    dim: int = 16
    separation: float = 2.5
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    n_train: int = 0
    n_test: int = 0

    def validate(self):
        if self.source not in ("synthetic", "idx"):
            raise ConfigError(f"data.source must be 'synthetic' or 'idx', got {self.source!r}")
        if self.source == "idx":
            missing = [k for k in ("train_images", "train_labels", "test_images", "test_labels") if not getattr(self, k)]
            if missing:
                raise ConfigError(f"data.source 'idx' needs {', '.join('data.' + k for k in missing)}")
        elif min(self.classes, self.train_per_class, self.test_per_class, self.dim) < 1:
            raise ConfigError("synthetic data sizes must be positive")


@dataclass
class TrainSection:
    batch_size: int = 100
    schedule: list = field(default_factory=lambda: [[0, 1e-3], [2000, 1e-4], [2500, 1e-5]])
    total_steps: int = 3000
    adam: list = field(default_factory=lambda: [0.9, 0.999, 1e-8])
    init_stddev: float = 0.05
    grad_norm_warn: float = 0.05

    def build(self):
        try:
            return TrainConfig(self.batch_size, tuple(map(tuple, self.schedule)), self.total_steps,
                               tuple(self.adam), self.init_stddev, self.grad_norm_warn)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from exc


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    network: NetworkConfig = field(default_factory=NetworkConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainSection = field(default_factory=TrainSection)
    seed_policy: str = DRWI
    base_seed: int = 0
    B: int = 32
    B_values: list = field(default_factory=lambda: [8, 16, 24, 32])
    K_values: list = field(default_factory=lambda: [50, 100, 200, 400, 600, 800])
    repetitions: int = 4
    lanczos_tol: float = 1e-6
    lanczos_max_iters: int = 0
    output_dir: str = "out"
    threads: int = 1
    keep_gradient_cache: bool = True

    @property
    def K_max(self):
        return max(self.K_values)

    def validate(self):
        self.network.validate()
        self.data.validate()
        self.train.build()
        if self.seed_policy not in (SRWI, DRWI):
            raise ConfigError(f"seed_policy must be SRWI or DRWI, got {self.seed_policy!r}")
        if self.base_seed < 0:
            raise ConfigError("base_seed must be non-negative")
        if self.B < 2:
            raise ConfigError("B must be at least 2")
        if not self.B_values or min(self.B_values) < 2 or max(self.B_values) > self.B:
            raise ConfigError("B_values must lie in [2, B]")
        if not self.K_values or min(self.K_values) < 1:
            raise ConfigError("K_values must be positive")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        return self

    def seed_policy_obj(self, base):
        return SeedPolicy(self.seed_policy, base)

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_SECTIONS = {"network": NetworkConfig, "data": DataConfig, "train": TrainSection}


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        if where == "" and k in _SECTIONS:
            v = _build(_SECTIONS[k], v, k)
        kwargs[k] = v
    return cls(**kwargs)


def from_dict(raw):
    try:
        return _build(ExperimentConfig, raw, "").validate()
    except TypeError as exc:
        raise ConfigError(f"invalid value type: {exc}") from exc


def load(path):
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(raw)


def loads(text):
    return from_dict(json.loads(text))
