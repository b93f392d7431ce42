"""Experiment configuration: YAML documents validated into nested dataclasses.

Unknown keys are rejected, list values become tuples where the field expects
one, and every nested section falls back to its defaults. ``desk`` (the
default) is sized for a laptop; ``paper`` restores the full-scale settings.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .anonymizers import KAnonConfig, MixZoneConfig, PerturbConfig
from .errors import ConfigError
from .federation import FederationConfig
from .vae import VaeConfig


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"       # or "geolife"
    path: str | None = None         # Geolife root (the directory holding Data/)
    n_users: int = 10
    segs_per_user: int = 200
    min_valid: int = 5              # shorter segments are dropped when preparing
    split: tuple = (8.0, 1.0, 1.0)

    def __post_init__(self):
        if self.source not in ("synthetic", "geolife"):
            raise ValueError("data.source must be 'synthetic' or 'geolife'")
        if self.source == "geolife" and not self.path:
            raise ValueError("data.path is required for the geolife source")
        if len(self.split) != 3 or min(self.split) <= 0:
            raise ValueError("data.split needs three positive ratios")
        if self.n_users < 1 or self.segs_per_user < 1 or self.min_valid < 1:
            raise ValueError("data sizes must be positive")

    @property
    def split_fractions(self):
        total = float(sum(self.split))
        return tuple(x / total for x in self.split)


@dataclass(frozen=True)
class ClientsConfig:
    count: int = 10
    partition: str = "by_user"      # or "uniform"

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("clients.count must be >= 1")
        if self.partition not in ("by_user", "uniform"):
            raise ValueError("clients.partition must be 'by_user' or 'uniform'")


@dataclass(frozen=True)
class GenerateConfig:
    per_mode: int | None = None     # None: match the training split's mode counts


@dataclass(frozen=True)
class AnonymizerConfig:
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    mixzone: MixZoneConfig = field(default_factory=MixZoneConfig)
    kanon: KAnonConfig = field(default_factory=KAnonConfig)


@dataclass(frozen=True)
class EvalConfig:
    knn_k: int = 5
    mlp_epochs: int = 300
    mlp_seeds: tuple = (0, 1, 2, 3, 4)
    kl_bins: int = 20
    repeats: int = 1
    methods: tuple = ("fedvae", "kanon", "perturb", "mixzone")

    def __post_init__(self):
        if self.knn_k < 1 or self.mlp_epochs < 1 or self.kl_bins < 1 or self.repeats < 1:
            raise ValueError("evaluation counts must be positive")
        if not self.mlp_seeds:
            raise ValueError("eval.mlp_seeds must not be empty")


@dataclass(frozen=True)
class ScalabilityConfig:
    client_counts: tuple = (2, 5, 10)
    rounds: int = 150
    tolerance: float = 0.005        # per-round improvement, as a fraction of the first loss
    smoothing: float = 0.3
    patience: int = 5
    segments: int | None = 400      # subsample of the training split; None for all

    def __post_init__(self):
        if not self.client_counts or min(self.client_counts) < 1:
            raise ValueError("scalability.client_counts must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 7
    out: str = "runs/desk"
    data: DataConfig = field(default_factory=DataConfig)
    clients: ClientsConfig = field(default_factory=ClientsConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    anonymizers: AnonymizerConfig = field(default_factory=AnonymizerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    scalability: ScalabilityConfig = field(default_factory=ScalabilityConfig)


PRESETS = {
    "desk": {
        "vae": {"hidden_size": 16, "latent_dim": 8, "batch_size": 25, "recon_weight": 20000.0,
                "truncation": "off"},
        "federation": {"rounds": 200, "local_epochs": 1},
    },
    "paper": {
        "out": "runs/paper",
        "clients": {"count": 69},
        "vae": {"hidden_size": 64, "latent_dim": 16, "batch_size": 2000,
                "recon_weight": 20000.0},
        "federation": {"rounds": 2000, "local_epochs": 1, "tolerance": 1e-5, "patience": 50},
    },
}


def _hints(cls):
    return typing.get_type_hints(cls)


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    hints = _hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value, hint = data[f.name], hints[f.name]
        path = f"{where}.{f.name}" if where else f.name
        if dataclasses.is_dataclass(hint):
            kwargs[f.name] = _build(hint, value, path)
        elif hint is tuple or typing.get_origin(hint) is tuple:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}: expected a list")
            kwargs[f.name] = tuple(value)
        else:
            kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def to_dict(cfg):
    """Plain nested dict (tuples as lists) suitable for YAML or JSON."""
    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (tuple, list)):
            return [plain(x) for x in v]
        return v
    return plain(cfg)


def from_dict(data, preset="desk"):
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return _build(ExperimentConfig, _merge(PRESETS[preset], data or {}), "")


def load_config(path=None, preset=None, overrides=None):
    """Read a YAML file (optional) on top of a preset, then apply ``overrides``.

    A top-level ``preset`` key in the file selects the base preset.
    """
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = dict(data)
    chosen = data.pop("preset", None) or preset or "desk"
    if overrides:
        data = _merge(data, overrides)
    return from_dict(data, chosen)


def dump_config(cfg, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False))
    return path
