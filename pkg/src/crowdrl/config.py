"""Experiment configuration: YAML parsing with line-numbered errors, overrides, presets."""
from __future__ import annotations

import copy
import enum
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .env import EnvConfig
from .perception import PerceptionConfig
from .policy import Architecture
from .ppo import PpoConfig
from .reward import EnergyModel, RewardConfig
from .scenarios import ScenarioConfig
from .sim import DynamicsConfig

OUTPUT_DIR_ENV = "CROWDRL_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    trunk: tuple = (64, 64)
    psi: tuple = (64,)
    phi: tuple = (64,)
    activation: str = "tanh"

    def __post_init__(self):
        for name in ("trunk", "psi", "phi"):
            widths = tuple(int(w) for w in getattr(self, name))
            if not widths or any(w < 1 for w in widths):
                raise ValueError(f"network.{name} needs positive widths")
            object.__setattr__(self, name, widths)
        if self.activation not in ("tanh", "relu"):
            raise ValueError("network.activation must be tanh or relu")


SECTIONS = {
    "scenario": ScenarioConfig,
    "perception": PerceptionConfig,
    "dynamics": DynamicsConfig,
    "reward": RewardConfig,
    "energy": EnergyModel,
    "ppo": PpoConfig,
    "network": NetworkConfig,
}
REQUIRED = ("scenario.kind", "n_iterations")


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "runs")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    energy: EnergyModel = field(default_factory=EnergyModel)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    name: str = "experiment"
    n_iterations: int = 200
    n_seeds: int = 1
    eval_episodes: int = 10
    checkpoint_every: int = 0
    output_dir: str = field(default_factory=default_output_dir)

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if self.eval_episodes < 0:
            raise ValueError("eval_episodes must be >= 0")

    @property
    def env(self) -> EnvConfig:
        return EnvConfig(self.scenario, self.perception, self.dynamics, self.reward, self.energy)

    def architecture(self) -> Architecture:
        n = self.network
        return Architecture.for_perception(self.perception, self.dynamics.v_max, n.trunk, n.psi, n.phi, n.activation)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @property
    def hash(self) -> str:
        """Short digest of every setting except where results are written."""
        data = self.to_dict()
        data.pop("output_dir")
        blob = json.dumps(data, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_value(self, path: str, value) -> "ExperimentConfig":
        data = self.to_dict()
        _assign(data, path, value)
        return from_dict(data)


def _plain(x):
    if isinstance(x, enum.Enum):
        return x.value
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


# ---------------------------------------------------------------------------
# Parsing


def _line_map(text: str) -> dict[tuple, int]:
    """Dotted key path -> 1-based line number of the key."""
    lines: dict[tuple, int] = {}
    root = yaml.compose(text)

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            lines.setdefault(path, node.start_mark.line + 1)
            for key, value in node.value:
                sub = path + (key.value,)
                lines[sub] = key.start_mark.line + 1
                walk(value, sub)

    if root is not None:
        walk(root, ())
    return lines


def _where(lines, path) -> str:
    for i in range(len(path), -1, -1):
        if tuple(path[:i]) in lines:
            return f"line {lines[tuple(path[:i])]}"
    return "line 1"


def _coerce(value, default, path):
    name = ".".join(path)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, enum.Enum):
        try:
            return type(default)(value)
        except ValueError:
            choices = ", ".join(m.value for m in type(default))
            raise ConfigError(f"{name}: {value!r} is not one of {choices}") from None
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        # YAML 1.1 reads exponent forms without a dot (1e-3) as strings.
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data, path, lines):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{'.'.join(path)} ({_where(lines, path)}): expected a mapping")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            where = _where(lines, path + (key,))
            raise ConfigError(f"unknown key '{'.'.join(path + (key,))}' ({where})")
    kwargs = {}
    for f in fields(cls):
        if f.name in data:
            kwargs[f.name] = _coerce(data[f.name], getattr(defaults, f.name), path + (f.name,))
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{'.'.join(path)} ({_where(lines, path)}): {exc}") from None


def from_dict(data: dict, lines: dict | None = None) -> ExperimentConfig:
    lines = lines or {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    for req in REQUIRED:
        parts = req.split(".")
        node = data
        for i, part in enumerate(parts):
            if not isinstance(node, dict) or part not in node:
                where = _where(lines, tuple(parts[:i]))
                raise ConfigError(f"missing required key '{req}' (expected near {where})")
            node = node[part]
    top = {k: v for k, v in data.items() if k not in SECTIONS}
    sections = {name: _build(cls, data.get(name), (name,), lines) for name, cls in SECTIONS.items()}
    top_cfg = _build(_TopLevel, top, (), lines)
    try:
        return ExperimentConfig(**sections, **asdict(top_cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class _TopLevel:
    name: str = "experiment"
    n_iterations: int = 200
    n_seeds: int = 1
    eval_episodes: int = 10
    checkpoint_every: int = 0
    output_dir: str = field(default_factory=default_output_dir)


def _assign(data: dict, path: str, value):
    parts = path.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set '{path}': '{part}' is not a section")
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """``a.b=value`` with the value read as YAML (numbers, lists, booleans)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    path, raw = text.split("=", 1)
    path = path.strip()
    if not path:
        raise ConfigError(f"override {text!r} has an empty key")
    return path, yaml.safe_load(raw)


def apply_overrides(data: dict, overrides) -> dict:
    data = copy.deepcopy(data)
    for item in overrides or ():
        path, value = parse_override(item) if isinstance(item, str) else item
        _assign(data, path, value)
    return data


def parse(text: str, overrides=None) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
        lines = _line_map(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return from_dict(apply_overrides(data or {}, overrides), lines)


def load(path, overrides=None) -> ExperimentConfig:
    return parse(Path(path).read_text(), overrides)


# ---------------------------------------------------------------------------
# Presets

_DESK_PPO = {"lr": 1e-3, "minibatch_size": 128, "n_parallel_worlds": 2, "steps_per_iteration": 128}

PRESETS: dict[str, dict] = {
    # single agent, used for the navigation and speed checks
    "random1": {
        "scenario": {"kind": "random", "n_agents": 1},
        "ppo": {**_DESK_PPO, "minibatch_size": 64, "n_parallel_worlds": 8},
        "n_iterations": 200,
    },
    "circle6": {"scenario": {"kind": "circle", "n_agents": 6, "circle_radius": 4.0},
                "ppo": _DESK_PPO, "n_iterations": 80},
    "circle12": {"scenario": {"kind": "circle", "n_agents": 12, "circle_radius": 4.0},
                 "ppo": _DESK_PPO, "n_iterations": 150},
    "corridor10": {"scenario": {"kind": "corridor", "n_agents": 10}, "ppo": _DESK_PPO, "n_iterations": 150},
    "crossing10": {"scenario": {"kind": "crossing", "n_agents": 10}, "ppo": _DESK_PPO, "n_iterations": 150},
    "random8": {"scenario": {"kind": "random", "n_agents": 8}, "ppo": _DESK_PPO, "n_iterations": 150},
    # full-size crowds; hours of CPU time each
    "circle30": {"scenario": {"kind": "circle", "n_agents": 30, "circle_radius": 8.0}, "n_iterations": 1000},
    "corridor50": {"scenario": {"kind": "corridor", "n_agents": 50}, "n_iterations": 1000},
    "crossing50": {"scenario": {"kind": "crossing", "n_agents": 50}, "n_iterations": 1000},
    "random20": {"scenario": {"kind": "random", "n_agents": 20}, "n_iterations": 1000},
}

SWEEP_PRESETS = {
    "collision": ("reward.c_c", [0.0, 0.01, 0.05, 0.1, 1.0, 20.0]),
    "exponent": ("reward.c_e", [1.0, 1.5, 2.0, 2.5, 3.0]),
}


def preset(name: str, overrides=None) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    data = {"name": name, **copy.deepcopy(PRESETS[name])}
    return from_dict(apply_overrides(data, overrides))


def numeric_leaf(cfg: ExperimentConfig, path: str) -> float:
    """Value at a dotted path, which must be a number."""
    node = cfg.to_dict()
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"'{path}' does not name a configuration value")
        node = node[part]
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(f"'{path}' is not numeric")
    return node
