"""Two-level policy-gradient training of regional agents and the federal planner."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from . import policy as pol
from .env import PandemicEnv, agent_feature_dim, planner_feature_dim
from .policy import PolicyParams

log = logging.getLogger(__name__)

WORKERS_ENV = "PANDEMIC_ECON_WORKERS"


@dataclass
class TrainConfig:
    iterations: int = 100
    episodes_per_iteration: int = 8
    agent_lr: float = 1.0
    planner_lr: float = 0.05
    agent_entropy: float = 0.01
    planner_entropy_start: float = 10.0
    planner_entropy_final: float = 0.025
    planner_anneal_fraction: float = 0.5
    baseline_decay: float = 0.99
    seeds: list[int] = field(default_factory=lambda: list(range(10)))

    def __post_init__(self):
        if self.iterations < 0 or self.episodes_per_iteration < 1:
            raise ValueError("iterations must be >= 0 and episodes_per_iteration >= 1")
        if self.agent_lr < 0 or self.planner_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if not 0 < self.planner_anneal_fraction <= 1:
            raise ValueError("planner_anneal_fraction must lie in (0, 1]")
        if not self.planner_entropy_start >= self.planner_entropy_final >= 0:
            raise ValueError("need planner_entropy_start >= planner_entropy_final >= 0")
        if self.agent_entropy < 0:
            raise ValueError("agent_entropy must be >= 0")
        if not 0 <= self.baseline_decay < 1:
            raise ValueError("baseline_decay must lie in [0, 1)")
        self.seeds = [int(s) for s in self.seeds]


def entropy_schedule(iteration: int, config: TrainConfig) -> float:
    """Planner entropy coefficient: linear anneal, then constant."""
    span = config.planner_anneal_fraction * config.iterations
    if span <= 0 or iteration >= span:
        return config.planner_entropy_final
    frac = iteration / span
    return config.planner_entropy_start + frac * (config.planner_entropy_final - config.planner_entropy_start)


@dataclass
class Trajectory:
    """Batched episode record; leading axes are (T, B)."""

    agent_obs: np.ndarray
    agent_actions: np.ndarray
    agent_probs: np.ndarray
    agent_mask: np.ndarray
    planner_obs: np.ndarray
    planner_actions: np.ndarray
    planner_probs: np.ndarray
    planner_mask: np.ndarray
    rewards: np.ndarray
    discounts: np.ndarray

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    def returns_to_go(self) -> np.ndarray:
        g = np.zeros_like(self.rewards)
        acc = np.zeros(self.rewards.shape[1:])
        for t in range(self.horizon - 1, -1, -1):
            acc = self.rewards[t] + self.discounts * acc
            g[t] = acc
        return g

    def episode_returns(self) -> np.ndarray:
        """Discounted return per episode and actor, shape (B, N + 1)."""
        weights = self.discounts[None, :] ** np.arange(self.horizon)[:, None]
        return np.einsum("tba,ta->ba", self.rewards, weights)

    def welfare(self) -> np.ndarray:
        """Episode welfare per actor: the undiscounted mean reward."""
        return self.rewards.mean(axis=0)

    def log_probs(self):
        a = np.take_along_axis(self.agent_probs, self.agent_actions[..., None], -1)[..., 0]
        p = np.take_along_axis(self.planner_probs, self.planner_actions[..., None], -1)[..., 0]
        return np.log(a), np.log(p)

    def entropies(self):
        return pol.entropy(self.agent_probs), pol.entropy(self.planner_probs)


def rollout(agent: PolicyParams, planner: PolicyParams, env: PandemicEnv,
            rng: np.random.Generator, greedy: bool = False) -> Trajectory:
    """Play one batch of episodes.

    Locked steps record the standing action and are excluded from the
    decision mask.
    """
    obs = env.reset()
    n = env.num_regions
    actors = np.arange(n)
    rows: dict[str, list] = {k: [] for k in Trajectory.__dataclass_fields__ if k != "discounts"}
    done = False
    while not done:
        a_probs = pol.action_distribution(obs["agents"], agent, actors)
        p_probs = pol.action_distribution(obs["planner"], planner, 0)
        if greedy:
            a_idx = np.argmax(a_probs, axis=-1)
            p_idx = np.argmax(p_probs, axis=-1)
        else:
            a_idx = pol.sample(a_probs, rng)
            p_idx = pol.sample(p_probs, rng)
        rows["agent_obs"].append(obs["agents"])
        rows["planner_obs"].append(obs["planner"])
        obs, rewards, done, info = env.step(a_idx + 1, p_idx + 1)
        rows["agent_actions"].append(info["agent_level"] - 1)
        rows["agent_probs"].append(a_probs)
        rows["agent_mask"].append(info["agent_decision"])
        rows["planner_actions"].append(info["planner_level"] - 1)
        rows["planner_probs"].append(p_probs)
        rows["planner_mask"].append(np.full(env.batch_size, info["planner_decision"]))
        rows["rewards"].append(rewards)
    discounts = np.array([env.config.agent_discount] * n + [env.config.planner_discount])
    return Trajectory(**{k: np.stack(v) for k, v in rows.items()}, discounts=discounts)


@dataclass
class ReturnBaseline:
    """Exponential moving average of returns-to-go per (day, actor)."""

    decay: float
    values: np.ndarray | None = None

    def advantages(self, returns_to_go: np.ndarray) -> np.ndarray:
        if self.values is None:
            return returns_to_go - returns_to_go.mean(axis=1, keepdims=True)
        return returns_to_go - self.values[:, None, :]

    def update(self, returns_to_go: np.ndarray) -> None:
        batch_mean = returns_to_go.mean(axis=1)
        if self.values is None:
            self.values = batch_mean
        else:
            self.values = self.decay * self.values + (1.0 - self.decay) * batch_mean


def _actor_class_gradient(obs, actions, probs, mask, adv, entropy_coef, params: PolicyParams, actors):
    onehot_minus_p = pol.log_prob_logit_grad(probs, actions)
    g = (mask * adv)[..., None] * onehot_minus_p
    if entropy_coef:
        g = g + entropy_coef * mask[..., None] * pol.entropy_logit_grad(probs)
    flat_obs = obs.reshape(-1, obs.shape[-1])
    flat_g = g.reshape(-1, g.shape[-1])
    flat_actors = np.broadcast_to(actors, mask.shape).reshape(-1)
    return pol.accumulate_gradients(flat_obs, flat_g, flat_actors, params)


def policy_gradient_update(traj: Trajectory, agent: PolicyParams, planner: PolicyParams,
                           config: TrainConfig, planner_entropy: float,
                           advantages: np.ndarray) -> tuple[PolicyParams, PolicyParams]:
    """One ascent step for both actor classes.

    ``advantages`` has shape (T, B, N + 1). Each class's gradient is the
    mean over its (day, episode) steps; agent terms are summed into the
    shared weights and into their own bias rows.
    """
    horizon, batch, n = traj.agent_actions.shape
    steps = horizon * batch
    gW, gb = _actor_class_gradient(traj.agent_obs, traj.agent_actions, traj.agent_probs,
                                   traj.agent_mask.astype(float), advantages[..., :n],
                                   config.agent_entropy, agent, np.arange(n))
    pW, pb = _actor_class_gradient(traj.planner_obs, traj.planner_actions, traj.planner_probs,
                                   traj.planner_mask.astype(float), advantages[..., n],
                                   planner_entropy, planner, np.zeros(1, dtype=int))
    grads = (gW / steps, gb / steps, pW / steps, pb / steps)
    if not all(np.all(np.isfinite(g)) for g in grads):
        bad = int(np.count_nonzero(~np.isfinite(advantages)))
        finite = np.abs(advantages[np.isfinite(advantages)])
        peak = f"{finite.max():.3g}" if finite.size else "n/a"
        raise FloatingPointError(
            f"non-finite policy gradient; {bad} non-finite advantage(s), max finite |advantage| = "
            f"{peak}; check reward normalization bounds")
    new_agent = PolicyParams(agent.W + config.agent_lr * grads[0], agent.b + config.agent_lr * grads[1])
    new_planner = PolicyParams(planner.W + config.planner_lr * grads[2],
                               planner.b + config.planner_lr * grads[3])
    return new_agent, new_planner


def initial_policies(env: PandemicEnv) -> tuple[PolicyParams, PolicyParams]:
    n = env.num_regions
    include_time = env.config.include_time
    agent = PolicyParams.zeros(agent_feature_dim(n, include_time), 10, n)
    planner = PolicyParams.zeros(planner_feature_dim(n, include_time), env.params.num_subsidy_levels, 1)
    return agent, planner


@dataclass
class SeedResult:
    seed: int
    agent: PolicyParams
    planner: PolicyParams
    curve: pd.DataFrame


def train_seed(config: TrainConfig, env_factory: Callable[[int], PandemicEnv], seed: int) -> SeedResult:
    """Train one seed; ``env_factory(batch_size)`` builds a fresh environment."""
    rng = np.random.default_rng(seed)
    env = env_factory(config.episodes_per_iteration)
    agent, planner = initial_policies(env)
    baseline = ReturnBaseline(config.baseline_decay)
    records = []
    for it in range(config.iterations):
        coef = entropy_schedule(it, config)
        traj = rollout(agent, planner, env, rng)
        g = traj.returns_to_go()
        adv = baseline.advantages(g)
        baseline.update(g)
        agent, planner = policy_gradient_update(traj, agent, planner, config, coef, adv)
        ret = traj.episode_returns().mean(axis=0)
        welfare = traj.welfare().mean(axis=0)
        row = {"seed": seed, "iteration": it, "planner_entropy_coef": coef,
               "mean_agent_return": float(ret[:-1].mean()), "planner_return": float(ret[-1]),
               "mean_welfare": float(welfare.mean())}
        row.update({f"return_{name}": float(v) for name, v in
                    zip(list(env.params.region_names) + ["federal"], ret)})
        records.append(row)
        log.debug("seed %d iteration %d welfare %.4f", seed, it, row["mean_welfare"])
    return SeedResult(seed, agent, planner, pd.DataFrame.from_records(records))


def _train_seed_star(args):
    return train_seed(*args)


def worker_count(default: int = 1) -> int:
    return max(1, int(os.environ.get(WORKERS_ENV, default)))


def train(config: TrainConfig, env_factory: Callable[[int], PandemicEnv],
          workers: int | None = None) -> list[SeedResult]:
    """Train every seed in ``config.seeds``; results are ordered by seed list."""
    workers = worker_count() if workers is None else workers
    jobs = [(config, env_factory, s) for s in config.seeds]
    if workers <= 1 or len(jobs) <= 1:
        return [train_seed(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_seed_star, jobs))


def evaluate(agent: PolicyParams, planner: PolicyParams, env: PandemicEnv, episodes: int,
             rng: np.random.Generator, greedy: bool = False) -> np.ndarray:
    """Welfare per evaluation episode and actor, shape (episodes, N + 1)."""
    out = []
    remaining = episodes
    while remaining > 0:
        traj = rollout(agent, planner, env, rng, greedy=greedy)
        out.append(traj.welfare()[:remaining])
        remaining -= env.batch_size
    return np.concatenate(out, axis=0)


def welfare_lift(trained: Sequence[np.ndarray], random: np.ndarray) -> dict[str, float]:
    """Mean per-actor welfare lift of trained policies over a random baseline, in standard errors."""
    t = np.concatenate([np.asarray(x).mean(axis=1) for x in trained])
    r = np.asarray(random).mean(axis=1)
    lift = float(t.mean() - r.mean())
    se = float(np.sqrt(t.var(ddof=1) / t.size + r.var(ddof=1) / r.size))
    return {"trained_mean": float(t.mean()), "random_mean": float(r.mean()), "lift": lift,
            "standard_error": se, "z": lift / se if se > 0 else float("inf")}
