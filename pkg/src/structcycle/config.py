"""Dataclass configs with strict dict/YAML round-tripping, env overrides and hashing."""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .data import PhantomSpec
from .errors import ConfigError
from .losses import AdvForm, LossWeights
from .models import ModelConfig
from .patches import SamplerMode

METHODS = ("gan_only", "cyclegan", "proposed")
ENV_PREFIX = "STRUCTCYCLE_"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 1
    learning_rate: float = 2e-4
    optimizer_moment_params: tuple[float, float] = (0.5, 0.999)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    pairs_per_image: int = 8
    sampler_mode: SamplerMode = SamplerMode.STRATIFIED
    eq3_literal: bool = False
    adv_form: AdvForm = AdvForm.LSQ
    image_side: int = 64
    checkpoint_every: int = 0
    val_every: int = 1
    feat_warmup_epochs: int = 5
    # method switches: cycle branch (G_CT, D_T, cycle loss) and structure module (f, C)
    use_cycle: bool = True
    use_structure: bool = True
    # P3/P4 on/off independently of the P1 feature term
    structure_phases: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.pairs_per_image < 1:
            raise ConfigError(f"pairs_per_image must be >= 1, got {self.pairs_per_image}")
        if self.checkpoint_every < 0 or self.val_every < 0 or self.feat_warmup_epochs < 0:
            raise ConfigError("checkpoint_every, val_every and feat_warmup_epochs must be >= 0")
        if self.model.image_side != self.image_side:
            raise ConfigError(f"model.image_side {self.model.image_side} != image_side {self.image_side}")
        if self.image_side // 3 < 16:
            raise ConfigError(f"image_side {self.image_side} gives grid patches smaller than 16 pixels")
        self.loss_weights.validate()
        self.model.validate()


def apply_method(cfg: TrainConfig, method: str) -> TrainConfig:
    """gan_only: adversarial G_TC/D_C only. cyclegan: adds the cycle branch. proposed: adds the structure module."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    return replace(cfg, use_cycle=method != "gan_only", use_structure=method == "proposed")


@dataclass(frozen=True)
class DataConfig:
    n_train_tagged: int = 200
    n_train_cine: int = 200
    n_val_pairs: int = 20
    n_eval_pairs: int = 50


@dataclass(frozen=True)
class EvalConfig:
    n_splits: int = 5
    probe_images: int = 800
    probe_epochs: int = 8
    use_best: bool = True
    montage: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "proposed"
    seed: int = 0
    out_dir: str = "runs/default"
    data_dir: str = "runs/data"
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def resolved(self) -> "ExperimentConfig":
        """Propagate top-level seed, method and canvas size into the training config."""
        side = self.phantom.canvas_size
        train = apply_method(self.train, self.method)
        train = replace(train, seed=self.seed, image_side=side, model=replace(train.model, image_side=side))
        out = replace(self, train=train)
        out.validate()
        return out

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        self.phantom.validate()
        self.train.validate()
        if self.phantom.canvas_size != self.train.image_side:
            raise ConfigError("phantom.canvas_size must equal train.image_side")


# -- (de)serialization -----------------------------------------------------------

def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    return obj


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        return from_dict(tp, value, where)
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError:
            raise ConfigError(f"{where}: {value!r} is not one of {[m.value for m in tp]}") from None
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a sequence")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, where) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(a, v, where) for a, v in zip(args, value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
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
    return value


def from_dict(cls, data: dict, where: str = ""):
    """Build a dataclass from a plain mapping; unknown keys are rejected."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join((where + '.' if where else '') + k for k in unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}" if where else k) for k, v in data.items()}
    return cls(**kwargs)


def config_hash(cfg) -> str:
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _set_path(d: dict, path: list[str], value):
    for key in path[:-1]:
        d = d.setdefault(key, {})
        if not isinstance(d, dict):
            raise ConfigError(f"cannot override nested key under non-mapping {key!r}")
    d[path[-1]] = value


def _parse_scalar(raw: str):
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        # YAML 1.1 reads forms like "1e30" as strings
        try:
            return float(value)
        except ValueError:
            pass
    return value


def env_overrides(environ=None) -> dict:
    """``STRUCTCYCLE_TRAIN__EPOCHS=3`` -> ``{"train": {"epochs": 3}}``; values parsed as YAML scalars."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in key[len(ENV_PREFIX):].split("__") if p]
        if path:
            _set_path(out, path, _parse_scalar(raw))
    return out


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_experiment(path: str | Path | None = None, overrides: dict | None = None,
                    environ=None) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = yaml.safe_load(p.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        data = loaded or {}
    data = _merge(data, env_overrides(environ))
    data = _merge(data, overrides or {})
    try:
        cfg = from_dict(ExperimentConfig, data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.resolved()


def dump_experiment(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=True))
