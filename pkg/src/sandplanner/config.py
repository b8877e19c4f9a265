"""One YAML file drives every run; this module maps it onto nested dataclasses.

Unknown keys are an error (typos otherwise silently fall back to defaults).
Lists in the file become tuples so configs stay hashable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .critic import CriticConfig
from .diffusion import ModelConfig, TrainConfig
from .expert_data import DataConfig
from .gridworld import NoiseParams
from .planner import PlannerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    suite: str = "cluttered"  # or "corridor"
    n_episodes: int = 100
    seed: int = 7
    density: float = 0.15
    workers: int = 1
    keep_traces: bool = False


@dataclass(frozen=True)
class AblationConfig:
    kinds: tuple[str, ...] = ("bspline", "waypoints", "cubic")
    # far-field noise injected for the representation comparison
    far_field_start: float = 3.0
    far_field_coeff: float = 0.1
    vtoken_seeds: tuple[int, ...] = (0, 1, 2)
    fractions: tuple[float, ...] = (0.1, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Propagate one master seed to data generation and training."""
        return dataclasses.replace(
            self,
            seed=seed,
            data=dataclasses.replace(self.data, master_seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )


def to_dict(obj) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (tuple, list)):
            return [conv(x) for x in v]
        return v

    return conv(obj)


def _strip_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    kw = {}
    for name, value in data.items():
        tp = _strip_optional(hints[name])
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(tp):
            kw[name] = _build(tp, value, path)
        elif typing.get_origin(tp) is tuple:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}: expected a list")
            kw[name] = tuple(value)
        elif tp is float and isinstance(value, int) and not isinstance(value, bool):
            kw[name] = float(value)
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def from_dict(data: dict | None) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def write_snapshot(cfg: ExperimentConfig, out_dir, name: str = "resolved_config.yaml") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = out / name
    p.write_text(f"# config hash {config_hash(cfg)}\n" + dump_config(cfg))
    return p


def config_hash(obj, exclude: tuple[str, ...] = ()) -> str:
    """Short stable digest; ``exclude`` drops dotted paths such as ``"train.seed"``."""
    d = to_dict(obj) if dataclasses.is_dataclass(obj) else obj
    d = json.loads(json.dumps(d))
    for key in exclude:
        *parents, leaf = key.split(".")
        node = d
        for p in parents:
            node = node.get(p, {})
        node.pop(leaf, None)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


__all__ = [
    "AblationConfig", "BenchConfig", "ConfigError", "CriticConfig", "DataConfig", "ExperimentConfig",
    "ModelConfig", "NoiseParams", "PlannerConfig", "TrainConfig", "config_hash", "dump_config",
    "from_dict", "load_config", "to_dict", "write_snapshot",
]
