"""Welfare of fixed and learned policies across perturbed transmission and unemployment dynamics."""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .env import EpisodeConfig, InitialConditions, PandemicEnv, replay
from .policy import PolicyParams
from .sim import ModulationParams, WorldParams
from .train import evaluate, rollout, worker_count
from .welfare import WelfareConfig


@dataclass
class SensitivityGrid:
    m_beta: np.ndarray = field(default_factory=lambda: np.linspace(0.85, 1.15, 7))
    m_w: np.ndarray = field(default_factory=lambda: np.linspace(0.5, 1.5, 7))

    def __post_init__(self):
        self.m_beta = np.asarray(self.m_beta, dtype=float)
        self.m_w = np.asarray(self.m_w, dtype=float)
        if self.m_beta.ndim != 1 or self.m_w.ndim != 1 or not self.m_beta.size or not self.m_w.size:
            raise ValueError("grid axes must be non-empty 1-d sequences")
        if np.any(self.m_beta <= 0) or np.any(self.m_w <= 0):
            raise ValueError("modulation multipliers must be positive")

    def cells(self):
        for i, mb in enumerate(self.m_beta):
            for j, mw in enumerate(self.m_w):
                yield i, j, ModulationParams(float(mb), float(mw))


@dataclass
class ReplayPolicy:
    """Recorded stringency (T, N) and subsidy inflow (T, N), applied without locks."""

    stringency: np.ndarray
    subsidy: np.ndarray | None = None


@dataclass
class CheckpointPolicy:
    agent: PolicyParams
    planner: PolicyParams
    greedy: bool = True
    seeds: tuple[int, ...] = (0,)


@dataclass
class GridResult:
    m_beta: np.ndarray
    m_w: np.ndarray
    actors: list[str]
    welfare: np.ndarray  # (|m_beta|, |m_w|, N + 1)

    @property
    def federal(self) -> np.ndarray:
        return self.welfare[..., -1]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for i, mb in enumerate(self.m_beta):
            for j, mw in enumerate(self.m_w):
                for a, name in enumerate(self.actors):
                    rows.append((float(mb), float(mw), name, float(self.welfare[i, j, a])))
        return pd.DataFrame(rows, columns=["m_beta", "m_w", "actor", "welfare"])


def _cell_welfare(policy, mod: ModulationParams, params: WorldParams, welfare: WelfareConfig,
                  initial: InitialConditions, config: EpisodeConfig) -> np.ndarray:
    if isinstance(policy, ReplayPolicy):
        _, trace = replay(params, welfare, initial, policy.stringency, policy.subsidy, mod)
        return trace.summary()["welfare"]
    env = PandemicEnv(params, welfare, initial, config, batch_size=1, mod=mod)
    if policy.greedy:
        traj = rollout(policy.agent, policy.planner, env, np.random.default_rng(0), greedy=True)
        return traj.welfare()[0]
    draws = [evaluate(policy.agent, policy.planner, env, 1, np.random.default_rng(s))[0]
             for s in policy.seeds]
    return np.mean(draws, axis=0)


def _cell_star(args):
    return args[0], args[1], _cell_welfare(*args[2:])


def run_grid(policy, grid: SensitivityGrid, params: WorldParams, welfare: WelfareConfig,
             initial: InitialConditions, config: EpisodeConfig = EpisodeConfig(),
             workers: int | None = None) -> GridResult:
    """One evaluation episode per cell with normalization bounds held at the unperturbed world.

    ``welfare.bounds`` must already be set so that every cell is scored on
    the same scale.
    """
    if welfare.bounds is None:
        raise ValueError("normalization bounds must be computed on the unperturbed world first")
    jobs = [(i, j, policy, mod, params, welfare, initial, config) for i, j, mod in grid.cells()]
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_star, jobs))
    else:
        results = [_cell_star(job) for job in jobs]
    out = np.zeros((grid.m_beta.size, grid.m_w.size, params.num_regions + 1))
    for i, j, w in results:
        out[i, j] = w
    return GridResult(grid.m_beta.copy(), grid.m_w.copy(), list(params.region_names) + ["federal"], out)


def ratio(ai: GridResult, real: GridResult) -> np.ndarray:
    if ai.welfare.shape != real.welfare.shape:
        raise ValueError("grids must have the same shape")
    return ai.welfare / real.welfare


def write_grid(out_dir, result: GridResult, baseline: GridResult | None = None) -> None:
    """``sensitivity.csv`` plus ``sensitivity_ratio.json`` when a baseline grid is given."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.to_frame().to_csv(out / "sensitivity.csv", index=False, float_format="%.17g")
    if baseline is not None:
        r = ratio(result, baseline)
        payload = {"m_beta": result.m_beta.tolist(), "m_w": result.m_w.tolist(),
                   "actors": result.actors,
                   "federal": r[..., -1].tolist(),
                   "per_actor": {name: r[..., a].tolist() for a, name in enumerate(result.actors)}}
        (out / "sensitivity_ratio.json").write_text(json.dumps(payload, indent=2))


def read_grid(path) -> GridResult:
    df = pd.read_csv(path, float_precision="round_trip")
    mb = np.sort(df["m_beta"].unique())
    mw = np.sort(df["m_w"].unique())
    actors = list(dict.fromkeys(df["actor"]))
    cube = df.pivot_table(index=["m_beta", "m_w"], columns="actor", values="welfare")[actors]
    return GridResult(mb, mw, actors, cube.to_numpy().reshape(mb.size, mw.size, len(actors)))
