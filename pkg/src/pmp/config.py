"""Experiment configuration: a strict JSON format with nested sections.

Every section is optional; unknown keys and wrong types are rejected with the
dotted path of the offending field. Example::

    {
      "version": 1,
      "name": "gauss55",
      "dataset": {"synth": {"classes": 5, "per_class": 60, "seed": 0}},
      "train": {"rate": 0.55, "epochs": 300, "target": {"kind": "gaussian"}},
      "sweep": {"rates": [0.55, 0.98], "targets": ["gaussian", "laplace"], "seeds": [0]}
    }

``dataset.path`` (JSONL or CSV, see ``pmp.data``) replaces the synthetic
generator when set. Relative ``output`` directories resolve against the
``PMP_OUTPUT_ROOT`` environment variable (default ``./runs``).
"""
import dataclasses
import json
import math
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .distributions import TargetDistribution
from .trainer import TrainConfig

CONFIG_VERSION = 1
OUTPUT_ROOT_ENV = "PMP_OUTPUT_ROOT"

# Default law per kind: each has unit-order spread over the default omega [-3, 3].
TARGET_PRESETS = {
    "gaussian": TargetDistribution.gaussian(0.0, 1.0),
    "laplace": TargetDistribution.laplace(0.0, 1.0 / math.sqrt(2.0)),
    "uniform": TargetDistribution.uniform(3.0),
}
NO_TARGET = "none"  # sweep entry: band-stop with the gaussian threshold but lam = 0


class ConfigError(ValueError):
    pass


@dataclass
class SynthSpec:
    n_joints: int = 14
    classes: int = 5
    per_class: int = 60
    frames: int = 64
    noise_std: float = 0.01
    seed: int = 0
    test_fraction: float = 0.5
    jitter: float = 0.0


@dataclass
class DataSpec:
    path: Optional[str] = None
    format: Optional[str] = None
    chunks: int = 32
    synth: SynthSpec = field(default_factory=SynthSpec)


@dataclass
class ModelSpec:
    s_emb: int = 16
    heads: int = 8
    filters: int = 32
    dense_dim: int = 32
    depth: int = 1
    fan_in_scaling: bool = True
    attention_noise: float = 0.01


@dataclass
class TargetSpec:
    kind: str = "gaussian"
    scale: Optional[float] = None  # None: the preset for ``kind``
    loc: float = 0.0

    def build(self) -> TargetDistribution:
        if self.kind not in TARGET_PRESETS:
            raise ConfigError(f"unknown target kind {self.kind!r}; expected one of {sorted(TARGET_PRESETS)}")
        preset = TARGET_PRESETS[self.kind]
        scale = preset.scale if self.scale is None else self.scale
        return TargetDistribution(self.kind, scale, self.loc)


@dataclass
class TrainSpec:
    epochs: int = 300
    batch_size: int = 32
    lam: float = 10.0
    rate: float = 0.0
    target: TargetSpec = field(default_factory=TargetSpec)
    omega: list[float] = field(default_factory=lambda: [-3.0, 3.0])
    K: int = 100
    lr0: float = 0.002
    lr_min: float = 2e-5
    lr_max: float = 0.01
    seed: int = 0
    quantile_mode: str = "magnitude"
    sigma0: float = 1.0
    sigma_decay: float = 1.0
    init: str = "target"
    init_range: float = 0.5
    retrain_epochs: Optional[int] = None
    histogram: str = "assign"
    project: bool = True

    def build(self, **overrides) -> TrainConfig:
        kw = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        kw["target"] = self.target.build()
        kw["omega"] = tuple(self.omega)
        kw.update(overrides)
        try:
            return TrainConfig(**kw)
        except ValueError as exc:
            raise ConfigError(f"train: {exc}") from None


@dataclass
class SweepSpec:
    rates: list[float] = field(default_factory=list)
    targets: list[Union[str, TargetSpec]] = field(default_factory=list)
    seeds: list[int] = field(default_factory=lambda: [0])
    baseline: bool = True  # add one magnitude-pruning row per (rate, seed)
    jobs: int = 1


@dataclass
class CurveSpec:
    a: Optional[float] = None  # None: threshold derived from train.rate and train.target
    sigma: Optional[float] = None  # None: train.sigma0
    points: int = 400


@dataclass
class ExperimentConfig:
    version: int = CONFIG_VERSION
    name: str = "experiment"
    output: Optional[str] = None  # None: <output root>/<name>
    dataset: DataSpec = field(default_factory=DataSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    curves: CurveSpec = field(default_factory=CurveSpec)

    def output_dir(self) -> Path:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        if self.output is None:
            return root / self.name
        out = Path(self.output)
        return out if out.is_absolute() else root / out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ------------------------------------------------------------------ parsing

def _parse(tp, value, where: str):
    origin = typing.get_origin(tp)
    if origin is Union:
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        errors = []
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _parse(arg, value, where)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[-1] if len(errors) == 1 else f"{where}: no accepted form matches {value!r}")
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        (item,) = typing.get_args(tp)
        return [_parse(item, v, f"{where}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _parse_section(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise TypeError(f"unsupported config field type {tp!r}")


def _parse_section(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown key '{prefix}{unknown[0]}'; allowed: {', '.join(sorted(names))}")
    kw = {}
    for name, value in raw.items():
        kw[name] = _parse(hints[name], value, f"{where}.{name}" if where else name)
    return cls(**kw)


def parse_config(raw: dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a decoded JSON object."""
    cfg = _parse_section(ExperimentConfig, raw, "")
    if cfg.version != CONFIG_VERSION:
        raise ConfigError(f"version: unsupported config version {cfg.version}")
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return parse_config(raw)


def validate(cfg: ExperimentConfig) -> None:
    if len(cfg.train.omega) != 2:
        raise ConfigError("train.omega: expected [min, max]")
    cfg.train.build()
    for i, r in enumerate(cfg.sweep.rates):
        if not 0.0 <= r < 1.0:
            raise ConfigError(f"sweep.rates[{i}]: rate must satisfy 0 <= r < 1, got {r}")
    for i, t in enumerate(cfg.sweep.targets):
        if isinstance(t, str):
            if t != NO_TARGET and t not in TARGET_PRESETS:
                raise ConfigError(f"sweep.targets[{i}]: unknown target {t!r}")
        else:
            try:
                t.build()
            except ValueError as exc:
                raise ConfigError(f"sweep.targets[{i}]: {exc}") from None
    if cfg.sweep.jobs < 1:
        raise ConfigError("sweep.jobs: must be >= 1")
    if cfg.dataset.format not in (None, "jsonl", "csv"):
        raise ConfigError(f"dataset.format: expected jsonl or csv, got {cfg.dataset.format!r}")
    if cfg.dataset.chunks < 1:
        raise ConfigError("dataset.chunks: must be >= 1")
    if cfg.curves.points < 2:
        raise ConfigError("curves.points: must be >= 2")


def validate_sweep(cfg: ExperimentConfig) -> None:
    if not cfg.sweep.rates:
        raise ConfigError("sweep.rates: must be non-empty")
    if not cfg.sweep.targets:
        raise ConfigError("sweep.targets: must be non-empty")
    if not cfg.sweep.seeds:
        raise ConfigError("sweep.seeds: must be non-empty")
