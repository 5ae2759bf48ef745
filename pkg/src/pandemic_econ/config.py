"""YAML run configuration with strict key checking."""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .calib import CalibrationConfig
from .env import EpisodeConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class WelfareSection:
    alpha_source: str = "explicit"  # explicit | calibrated
    alpha: float | list[float] = 0.5
    agent_priority_scale: float | list[float] = 1.0
    planner_priority_scale: float = 1.0
    crra_shape: float = 2.0
    borrowing_cost: float = 1.0

    def __post_init__(self):
        if self.alpha_source not in ("explicit", "calibrated"):
            raise ConfigError("welfare.alpha_source must be 'explicit' or 'calibrated'")


@dataclass
class SimulateSection:
    policy: str = "fixed"  # fixed | replay | checkpoint
    stringency_level: int = 1
    subsidy_level: int = 1
    greedy: bool = True

    def __post_init__(self):
        if self.policy not in ("fixed", "replay", "checkpoint"):
            raise ConfigError("simulate.policy must be 'fixed', 'replay' or 'checkpoint'")


@dataclass
class EvaluateSection:
    episodes: int = 20
    greedy: bool = False

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("evaluate.episodes must be >= 1")


@dataclass
class SensitivitySection:
    m_beta: list[float] = field(default_factory=lambda: np.linspace(0.85, 1.15, 7).tolist())
    m_w: list[float] = field(default_factory=lambda: np.linspace(0.5, 1.5, 7).tolist())
    policies: list[str] = field(default_factory=lambda: ["replay", "checkpoint"])
    greedy: bool = True
    sample_seeds: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        bad = set(self.policies) - {"replay", "checkpoint"}
        if bad or not self.policies:
            raise ConfigError("sensitivity.policies must be a non-empty subset of [replay, checkpoint]")


@dataclass
class AlphaSection:
    start_date: str = "2020-03-23"
    end_date: str = "2020-12-31"


@dataclass
class PathsSection:
    data_dir: str | None = None
    params: str | None = None
    alpha: str | None = None
    checkpoint: str | None = None
    replay: str | None = None
    outcomes: str | None = None


SECTIONS = {
    "welfare": WelfareSection,
    "episode": EpisodeConfig,
    "train": TrainConfig,
    "calibration": CalibrationConfig,
    "simulate": SimulateSection,
    "evaluate": EvaluateSection,
    "sensitivity": SensitivitySection,
    "alpha": AlphaSection,
    "paths": PathsSection,
}


@dataclass
class RunConfig:
    seed: int = 0
    world: dict[str, Any] = field(default_factory=dict)
    welfare: WelfareSection = field(default_factory=WelfareSection)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    sensitivity: SensitivitySection = field(default_factory=SensitivitySection)
    alpha: AlphaSection = field(default_factory=AlphaSection)
    paths: PathsSection = field(default_factory=PathsSection)

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        data = dict(data or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {unknown}")
        kwargs: dict[str, Any] = {}
        if "seed" in data:
            kwargs["seed"] = _seed(data["seed"])
        if "world" in data:
            if not isinstance(data["world"], dict):
                raise ConfigError("world must be a mapping of WorldParams overrides")
            kwargs["world"] = dict(data["world"])
        for name, section_cls in SECTIONS.items():
            if name in data:
                kwargs[name] = _section(section_cls, data[name], name)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"seed": self.seed, "world": copy.deepcopy(self.world)}
        for name in SECTIONS:
            out[name] = _plain(dataclasses.asdict(getattr(self, name)))
        return out

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=_seed(seed))


def _seed(value) -> int:
    seed = int(value)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return seed


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def _section(cls, data, name):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in section '{name}': {unknown}")
    values = dict(data)
    if cls is CalibrationConfig and "delay_candidates" in values:
        values["delay_candidates"] = tuple(values["delay_candidates"])
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section '{name}': {exc}") from exc


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return RunConfig.from_dict(data)


# Published constants; --paper-defaults pins each of these over whatever the config says.
PUBLISHED_CONSTANTS: dict[str, dict[str, Any]] = {
    "world": {
        "mortality": 0.02,
        "recovery": 1.0 / 14.0,
        "stringency_delay": 29,
        "vaccine_onset": 297,
        "vaccine_rate": 3e-3,
        "working_age_fraction": 0.6,
        "infected_nonworking_fraction": 0.1,
        "output_per_worker": 320.81,
        "num_subsidy_levels": 20,
        "max_daily_subsidy_per_capita": 55.0,
    },
    "welfare": {"crra_shape": 2.0, "borrowing_cost": 1.0},
    "episode": {"horizon": 540, "analysis_end": 404, "start_date": "2020-03-22",
                "agent_lock_days": 28, "planner_period": 90},
    "train": {"planner_entropy_start": 10.0, "planner_entropy_final": 0.025,
              "planner_anneal_fraction": 0.5},
    "calibration": {"split_date": "2020-11-30", "delay_candidates": (0, 60), "num_filters": 3,
                    "filter_length": 120, "initial_decays": [7.0, 30.0, 120.0]},
    "sensitivity": {"m_beta": np.linspace(0.85, 1.15, 7).tolist(),
                    "m_w": np.linspace(0.5, 1.5, 7).tolist()},
    "alpha": {"start_date": "2020-03-23", "end_date": "2020-12-31"},
}


def pin_published_defaults(config: RunConfig) -> RunConfig:
    data = config.to_dict()
    data["world"].update(PUBLISHED_CONSTANTS["world"])
    for name, values in PUBLISHED_CONSTANTS.items():
        if name != "world":
            data[name].update(values)
    return RunConfig.from_dict(data)


def dump_config(config: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
