"""Experiment configuration: typed defaults, TOML parsing, deterministic echo.

An empty document yields the full desk-scale defaults. Unknown sections or
keys are rejected by name, so a typo like "gama" fails loudly instead of
silently training with the default. serialize_config writes a stable key
order, which keeps echoed configs byte-identical across runs.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .envs import ENV_IDS
from .errors import ConfigError

INTERFACES = ("zprl", "action", "noise", "emb")


@dataclass
class DemosConfig:
    n: int = 100
    clean_fraction: float = 0.5


@dataclass
class OfflineConfig:
    epochs: int = 300
    batch: int = 128
    lr: float = 1e-3
    beta: float = 1e-4
    d_z: int = 16
    dim_c: int = 64
    enc_hidden: tuple[int, ...] = (128, 128)
    vel_hidden: tuple[int, ...] = (256, 256)
    vib_hidden: tuple[int, ...] = (256, 256, 256, 256)
    vib_enabled: bool = True
    continuous_k: bool = False
    schedule: tuple[float, ...] = (1.0, 0.01, 0.0)


@dataclass
class OnlineConfig:
    interface: str = "zprl"
    total_env_steps: int = 100_000
    warmup_chunks: int = 500
    batch: int = 256
    actor_lr: float = 1e-4
    critic_lr: float = 3e-4
    temperature_lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005
    init_temperature: float = 0.01
    n_critics: int = 2
    utd: int = 1
    actor_hidden: tuple[int, ...] = (128, 128)
    critic_hidden: tuple[int, ...] = (128, 128)
    lam: float | str = "auto"          # TOML key: lambda
    lambda_ratio: float = 0.15
    progressive_chunks: int = 0        # action arm: ramp residual probability, 0 = off
    buffer_capacity: int = 100_000
    eval_interval_chunks: int = 2500
    eval_episodes: int = 50
    eval_seed_base: int = 10_000
    checkpoint_every: int = 2          # eval rounds between actor checkpoints


@dataclass
class PathsConfig:
    data_root: str = "runs"
    dataset: str = ""
    bundle: str = ""


@dataclass
class ExperimentConfig:
    env: str = "reach2d"
    seed: int = 0
    demos: DemosConfig = field(default_factory=DemosConfig)
    offline: OfflineConfig = field(default_factory=OfflineConfig)
    online: OnlineConfig = field(default_factory=OnlineConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


_SECTIONS = {"demos": DemosConfig, "offline": OfflineConfig, "online": OnlineConfig, "paths": PathsConfig}
_TOP_KEYS = ("env", "seed")
_KEY_ALIASES = {"online": {"lambda": "lam"}}
_TUPLE_FIELDS = {"enc_hidden", "vel_hidden", "vib_hidden", "actor_hidden", "critic_hidden", "schedule"}


def _coerce(section: str, name: str, value: Any, target: Any) -> Any:
    if name in _TUPLE_FIELDS:
        if not isinstance(value, list) or not value:
            raise ConfigError(f"[{section}] {name} must be a non-empty list")
        return tuple(value)
    if isinstance(target, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"[{section}] {name} must be a boolean")
        return value
    if isinstance(target, int) and not isinstance(target, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"[{section}] {name} must be an integer")
        return value
    if isinstance(target, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"[{section}] {name} must be a number")
        return float(value)
    # str or the lambda union
    return value


def _apply(section_name: str, obj: Any, data: dict) -> None:
    aliases = _KEY_ALIASES.get(section_name, {})
    known = {f.name: getattr(obj, f.name) for f in fields(obj)}
    for key, value in data.items():
        name = aliases.get(key, key)
        if name not in known:
            raise ConfigError(f"unknown key {key!r} in [{section_name}]")
        setattr(obj, name, _coerce(section_name, name, value, known[name]))


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.env not in ENV_IDS:
        raise ConfigError(f"env must be one of {ENV_IDS}, got {cfg.env!r}")
    if cfg.online.interface not in INTERFACES:
        raise ConfigError(f"online.interface must be one of {INTERFACES}")
    if not 0.0 < cfg.online.gamma <= 1.0:
        raise ConfigError("online.gamma must be in (0, 1]")
    if not 0.0 < cfg.online.tau <= 1.0:
        raise ConfigError("online.tau must be in (0, 1]")
    for name, v in [
        ("offline.epochs", cfg.offline.epochs), ("offline.batch", cfg.offline.batch),
        ("offline.d_z", cfg.offline.d_z), ("offline.dim_c", cfg.offline.dim_c),
        ("online.batch", cfg.online.batch), ("online.n_critics", cfg.online.n_critics),
        ("online.utd", cfg.online.utd), ("online.eval_episodes", cfg.online.eval_episodes),
        ("demos.n", cfg.demos.n),
    ]:
        if v < 1:
            raise ConfigError(f"{name} must be >= 1")
    for name, v in [
        ("offline.lr", cfg.offline.lr), ("online.actor_lr", cfg.online.actor_lr),
        ("online.critic_lr", cfg.online.critic_lr), ("online.temperature_lr", cfg.online.temperature_lr),
        ("online.init_temperature", cfg.online.init_temperature),
    ]:
        if v <= 0:
            raise ConfigError(f"{name} must be > 0")
    if cfg.offline.beta < 0:
        raise ConfigError("offline.beta must be >= 0")
    if not 0.0 <= cfg.demos.clean_fraction <= 1.0:
        raise ConfigError("demos.clean_fraction must be in [0, 1]")
    lam = cfg.online.lam
    if isinstance(lam, str):
        if lam != "auto":
            raise ConfigError("online.lambda must be a number or 'auto'")
    elif lam < 0:
        raise ConfigError("online.lambda must be >= 0")
    if cfg.online.lambda_ratio <= 0:
        raise ConfigError("online.lambda_ratio must be > 0")
    if cfg.online.progressive_chunks < 0:
        raise ConfigError("online.progressive_chunks must be >= 0")
    from .flow import validate_schedule  # local import to avoid a cycle

    try:
        validate_schedule(cfg.offline.schedule)
    except ValueError as e:
        raise ConfigError(f"offline.schedule: {e}") from e


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config is not valid TOML: {e}") from e
    cfg = ExperimentConfig()
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a section")
            _apply(key, getattr(cfg, key), value)
        elif key == "env":
            cfg.env = value
        elif key == "seed":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError("seed must be an integer")
            cfg.seed = value
        else:
            raise ConfigError(f"unknown key {key!r} at top level")
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    from pathlib import Path

    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, tuple):
        return "[" + ", ".join(repr(v) for v in value) + "]"
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = [f"env = {_fmt(cfg.env)}", f"seed = {_fmt(cfg.seed)}", ""]
    for section, cls in _SECTIONS.items():
        obj = getattr(cfg, section)
        reverse = {v: k for k, v in _KEY_ALIASES.get(section, {}).items()}
        lines.append(f"[{section}]")
        for f in fields(cls):
            lines.append(f"{reverse.get(f.name, f.name)} = {_fmt(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)
