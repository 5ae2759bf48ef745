"""Markov game over the simulated world: regional agents and a federal planner.

The environment steps ``batch_size`` independent episodes in lock-step; every
array carries the batch on its first axis.
"""
from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .sim import (
    NUM_STRINGENCY_LEVELS,
    ModulationParams,
    RegionState,
    ScheduleResult,
    WorldParams,
    delayed_stringency,
    initial_state,
    productivity,
    simulate_schedule,
    subsidy_inflow,
    workforce,
    world_step,
)
from .welfare import IndexTrace, WelfareConfig, compute_normalization, index_trace, marginal_indices, normalize, reward

REGION_FEATURES = (
    "susceptible", "infected", "recovered", "deaths", "vaccinated",
    "unemployment", "productivity", "stringency", "stringency_delayed", "subsidy",
)


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int = 540
    analysis_end: int = 404
    start_date: str = "2020-03-22"
    agent_discount: float = 0.998
    planner_discount: float = 0.998
    agent_lock_days: int = 28
    planner_period: int = 90
    include_time: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 1 <= self.analysis_end <= self.horizon:
            raise ValueError("analysis_end must lie in 1..horizon")
        for g in (self.agent_discount, self.planner_discount):
            if not 0 < g <= 1:
                raise ValueError("discount factors must lie in (0, 1]")
        if self.agent_lock_days < 1 or self.planner_period < 1:
            raise ValueError("lock and planner period must be >= 1 day")
        dt.date.fromisoformat(self.start_date)

    def date_of(self, t: int) -> str:
        return (dt.date.fromisoformat(self.start_date) + dt.timedelta(days=int(t))).isoformat()

    def day_of(self, date: str) -> int:
        return (dt.date.fromisoformat(date) - dt.date.fromisoformat(self.start_date)).days


@dataclass
class InitialConditions:
    susceptible: np.ndarray
    infected: np.ndarray
    recovered: np.ndarray
    vaccinated: np.ndarray | None = None

    def state(self, params: WorldParams, batch_shape: tuple[int, ...] = ()) -> RegionState:
        return initial_state(params, self.susceptible, self.infected, self.recovered,
                             self.vaccinated, batch_shape=batch_shape)

    def to_dict(self) -> dict:
        return {k: (None if v is None else np.asarray(v).tolist()) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "InitialConditions":
        return cls(**{k: (None if v is None else np.asarray(v, dtype=float)) for k, v in data.items()})


def agent_feature_dim(num_regions: int, include_time: bool = True) -> int:
    return num_regions + len(REGION_FEATURES) + int(include_time)


def planner_feature_dim(num_regions: int, include_time: bool = True) -> int:
    return num_regions * len(REGION_FEATURES) + int(include_time)


def region_features(state: RegionState, output, subsidy, params: WorldParams, p0) -> np.ndarray:
    """Normalized per-region features, shape (..., N, F)."""
    n = params.population
    cols = [
        state.susceptible / n,
        state.infected / n,
        state.recovered / n,
        state.deaths / n,
        state.vaccinated / n,
        state.unemployment / n,
        output / p0,
        state.stringency / NUM_STRINGENCY_LEVELS,
        delayed_stringency(state, params) / NUM_STRINGENCY_LEVELS,
        np.broadcast_to(subsidy, output.shape) / p0,
    ]
    return np.stack(cols, axis=-1)


def build_observations(features: np.ndarray, t: int, config: EpisodeConfig) -> dict[str, np.ndarray]:
    batch, n, _ = features.shape
    onehot = np.broadcast_to(np.eye(n), (batch, n, n))
    agent = [onehot, features]
    planner = [features.reshape(batch, -1)]
    if config.include_time:
        frac = t / config.horizon
        agent.append(np.full((batch, n, 1), frac))
        planner.append(np.full((batch, 1), frac))
    return {"agents": np.concatenate(agent, axis=-1), "planner": np.concatenate(planner, axis=-1)}


class PandemicEnv:
    """Batched environment with 28-day stringency locks and a 90-day planner grid.

    The reset state is the world on the start date (day 0); step ``k``
    produces day ``k + 1``.

    Agent actions are stringency levels 1..10 with shape (B, N); planner
    actions are subsidy levels 1..num_subsidy_levels with shape (B,). Actions
    submitted while an actor is locked are ignored in favor of its standing
    choice.
    """

    def __init__(self, params: WorldParams, welfare: WelfareConfig, initial: InitialConditions,
                 config: EpisodeConfig = EpisodeConfig(), batch_size: int = 1,
                 mod: ModulationParams = ModulationParams(), record: bool = False):
        self.params = params
        self.config = config
        self.initial = initial
        self.batch_size = int(batch_size)
        self.mod = mod
        self.record = record
        if welfare.bounds is None:
            bounds = compute_normalization(params, initial.state(params), config.horizon, welfare, mod)
            welfare = replace(welfare, bounds=bounds)
        self.welfare = welfare
        self.t = 0
        self.state: RegionState | None = None

    @property
    def num_regions(self) -> int:
        return self.params.num_regions

    @property
    def num_actors(self) -> int:
        return self.params.num_regions + 1

    def reset(self) -> dict[str, np.ndarray]:
        b, n = self.batch_size, self.num_regions
        self.state = self.initial.state(self.params, batch_shape=(b,))
        self.t = 0
        self.agent_level = np.broadcast_to(self.params.initial_stringency, (b, n)).astype(int)
        self.agent_lock = np.zeros((b, n), dtype=int)
        self.planner_level = np.ones(b, dtype=int)
        self.subsidy = np.zeros((b, n))
        self.output = productivity(workforce(self.state, self.params), self.subsidy, self.params)
        self.history: list[dict[str, np.ndarray]] = []
        return self.observe()

    def observe(self) -> dict[str, np.ndarray]:
        feats = region_features(self.state, self.output, self.subsidy, self.params,
                                self.welfare.baseline_productivity)
        return build_observations(feats, self.t, self.config)

    def agent_unlocked(self) -> np.ndarray:
        return self.agent_lock == 0

    def planner_unlocked(self) -> bool:
        return self.t % self.config.planner_period == 0

    def step(self, agent_actions, planner_action):
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        if self.t >= self.config.horizon:
            raise RuntimeError("episode is over; call reset()")
        b, n = self.batch_size, self.num_regions
        agent_actions = np.broadcast_to(np.asarray(agent_actions), (b, n))
        planner_action = np.broadcast_to(np.asarray(planner_action), (b,))
        if np.any((agent_actions < 1) | (agent_actions > NUM_STRINGENCY_LEVELS)):
            raise ValueError("agent actions must be stringency levels in 1..10")
        if np.any((planner_action < 1) | (planner_action > self.params.num_subsidy_levels)):
            raise ValueError(f"planner actions must lie in 1..{self.params.num_subsidy_levels}")

        agent_decision = self.agent_unlocked()
        changed = agent_decision & (agent_actions != self.agent_level)
        self.agent_level = np.where(agent_decision, agent_actions, self.agent_level).astype(int)
        planner_decision = self.planner_unlocked()
        if planner_decision:
            self.planner_level = planner_action.astype(int).copy()

        self.subsidy = subsidy_inflow(self.planner_level, self.params)
        prev_deaths = self.state.deaths
        self.state, self.output = world_step(self.state, self.agent_level, self.subsidy, self.t + 1,
                                             self.params, self.mod)
        new_deaths = self.state.deaths - prev_deaths
        mh, me = marginal_indices(new_deaths, self.output, self.subsidy, self.welfare)
        h, e = normalize(mh, me, self.welfare.bounds)
        rewards = reward(h, e, self.welfare)

        self.agent_lock = np.where(changed, self.config.agent_lock_days, self.agent_lock)
        self.agent_lock = np.maximum(self.agent_lock - 1, 0)
        info = {
            "t": self.t,
            "agent_decision": agent_decision,
            "planner_decision": planner_decision,
            "agent_level": self.agent_level.copy(),
            "planner_level": self.planner_level.copy(),
        }
        if self.record:
            s = self.state
            self.history.append({
                "susceptible": s.susceptible, "infected": s.infected, "recovered": s.recovered,
                "vaccinated": s.vaccinated, "deaths": s.deaths, "new_deaths": new_deaths,
                "unemployment": s.unemployment, "productivity": self.output,
                "stringency": s.stringency.copy(), "subsidy": self.subsidy,
                "planner_level": self.planner_level.copy(), "reward": rewards,
            })
        self.t += 1
        done = self.t >= self.config.horizon
        return self.observe(), rewards, done, info

    def episode_record(self, member: int = 0) -> tuple[ScheduleResult, np.ndarray]:
        """Recorded trajectory of one batch member and its emitted rewards."""
        if not self.history:
            raise RuntimeError("environment was not created with record=True or has not stepped")
        fields = ScheduleResult.__dataclass_fields__
        result = ScheduleResult(**{k: np.stack([h[k][member] for h in self.history]) for k in fields})
        rewards = np.stack([h["reward"][member] for h in self.history])
        return result, rewards


def trajectory_frame(result: ScheduleResult, trace: IndexTrace, params: WorldParams,
                     config: EpisodeConfig) -> pd.DataFrame:
    """Per-day, per-actor table; the planner row aggregates regions by summation."""
    horizon, n = result.deaths.shape
    names = list(params.region_names) + ["federal"]
    per_region = {
        "S": result.susceptible, "I": result.infected, "R": result.recovered,
        "V": result.vaccinated, "D": result.deaths, "U": result.unemployment,
        "P": result.productivity, "subsidy": result.subsidy,
    }
    frames = []
    for a, name in enumerate(names):
        row = {"day": np.arange(1, horizon + 1), "date": [config.date_of(t) for t in range(1, horizon + 1)],
               "actor": name}
        for key, arr in per_region.items():
            row[key] = arr[:, a] if a < n else arr.sum(axis=1)
        row["stringency"] = result.stringency[:, a] if a < n else result.stringency.mean(axis=1)
        row["dH_raw"] = trace.marginal_health[:, a]
        row["dE_raw"] = trace.marginal_econ[:, a]
        row["dH"] = trace.health[:, a]
        row["dE"] = trace.econ[:, a]
        row["reward"] = trace.reward[:, a]
        frames.append(pd.DataFrame(row))
    return pd.concat(frames, ignore_index=True)


def episode_summary(trace: IndexTrace, params: WorldParams, config: EpisodeConfig,
                    extra: dict | None = None) -> dict:
    names = list(params.region_names) + ["federal"]
    full = trace.summary()
    horizon = trace.health.shape[0]
    analysis = trace.summary((0, min(config.analysis_end, horizon) - 1))
    out = {"actors": names, "alpha": trace.effective_alpha.tolist()}
    for label, s in (("episode", full), ("analysis_window", analysis)):
        out[label] = {k: np.asarray(v).tolist() for k, v in s.items()}
    out["mean_welfare"] = float(np.mean(full["welfare"]))
    if extra:
        out.update(extra)
    return out


def write_trajectory(out_dir, result: ScheduleResult, trace: IndexTrace, params: WorldParams,
                     config: EpisodeConfig, extra: dict | None = None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trajectory_frame(result, trace, params, config).to_csv(out_dir / "trajectory.csv", index=False)
    summary = episode_summary(trace, params, config, extra)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def read_trajectory_schedule(path, params: WorldParams) -> tuple[np.ndarray, np.ndarray]:
    """Stringency (T, N) and subsidy inflow (T, N) from a written trajectory CSV."""
    df = pd.read_csv(path, float_precision="round_trip")
    missing = {"day", "actor", "stringency", "subsidy"} - set(df.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    df = df[df["actor"] != "federal"]
    s = df.pivot(index="day", columns="actor", values="stringency")
    p = df.pivot(index="day", columns="actor", values="subsidy")
    names = list(params.region_names)
    absent = set(names) - set(s.columns)
    if absent:
        raise ValueError(f"{path}: regions {sorted(absent)} not present in replay")
    return s[names].to_numpy(dtype=float), p[names].to_numpy(dtype=float)


def replay(params: WorldParams, welfare: WelfareConfig, initial: InitialConditions,
           stringency, subsidy=None, mod: ModulationParams = ModulationParams()):
    """Run fixed schedules without action locks and score them."""
    result = simulate_schedule(params, initial.state(params), stringency, subsidy, mod)
    return result, index_trace(result, welfare)
