"""Health and economic indices, normalization, rewards and health-priority estimation.

Actor arrays have length ``N + 1``: regions first, the federal planner last.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .sim import (
    NUM_STRINGENCY_LEVELS,
    ModulationParams,
    RegionState,
    ScheduleResult,
    WorldParams,
    baseline_productivity,
    simulate_schedule,
)


class DegenerateNormalizationError(ValueError):
    """Extreme-policy rollouts produced identical index values."""


class FrontierBoundaryError(ValueError):
    """Observed outcomes sit on an endpoint of the Pareto frontier."""


def crra(x, eta: float = 2.0):
    """Isoelastic transform ``1 + (x**(1 - eta) - 1) / (1 - eta)``; ``1 + ln x`` at eta = 1."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("crra is only defined for positive arguments (degenerate productivity)")
    if eta == 1.0:
        return 1.0 + np.log(x)
    return 1.0 + (x ** (1.0 - eta) - 1.0) / (1.0 - eta)


def adjusted_alpha(alpha, scale):
    """Rescale the health/economy odds ``alpha / (1 - alpha)`` by ``scale``."""
    alpha = np.asarray(alpha, dtype=float)
    scale = np.asarray(scale, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        odds = scale * alpha / (1.0 - alpha)
        out = odds / (1.0 + odds)
    out = np.where(alpha >= 1.0, np.where(scale > 0, 1.0, 0.0), out)
    return np.where(alpha <= 0.0, 0.0, out)


@dataclass
class NormalizationBounds:
    health_min: np.ndarray
    health_max: np.ndarray
    econ_min: np.ndarray
    econ_max: np.ndarray

    def to_dict(self) -> dict[str, list]:
        return {k: np.asarray(v).tolist() for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "NormalizationBounds":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in data.items()})


@dataclass
class WelfareConfig:
    """Welfare weights and index settings for all actors."""

    alpha: np.ndarray
    baseline_productivity: np.ndarray
    crra_shape: float = 2.0
    borrowing_cost: float = 1.0
    health_priority_scale: np.ndarray | float = 1.0
    bounds: NormalizationBounds | None = None

    def __post_init__(self):
        self.baseline_productivity = np.asarray(self.baseline_productivity, dtype=float)
        n_actors = self.baseline_productivity.shape[0] + 1
        self.alpha = np.broadcast_to(np.asarray(self.alpha, dtype=float), (n_actors,)).copy()
        self.health_priority_scale = np.broadcast_to(
            np.asarray(self.health_priority_scale, dtype=float), (n_actors,)).copy()
        if np.any((self.alpha < 0) | (self.alpha > 1)):
            raise ValueError("alpha must lie in [0, 1]")
        if self.borrowing_cost < 1:
            raise ValueError("borrowing_cost must be >= 1")
        if np.any(self.health_priority_scale < 0):
            raise ValueError("health_priority_scale must be >= 0")
        if np.any(self.baseline_productivity <= 0):
            raise ValueError("baseline productivity must be positive")

    @classmethod
    def for_world(cls, params: WorldParams, alpha=0.5, **kwargs) -> "WelfareConfig":
        return cls(alpha=alpha, baseline_productivity=baseline_productivity(params), **kwargs)

    @property
    def num_actors(self) -> int:
        return self.alpha.shape[0]

    @property
    def effective_alpha(self) -> np.ndarray:
        return adjusted_alpha(self.alpha, self.health_priority_scale)


def marginal_indices(new_deaths, output, subsidy, config: WelfareConfig):
    """Unnormalized marginal health and economic indices for regions and planner.

    Inputs have regions on the last axis; outputs have ``N + 1`` actors there.
    """
    new_deaths = np.asarray(new_deaths, dtype=float)
    output = np.asarray(output, dtype=float)
    subsidy = np.broadcast_to(np.asarray(subsidy, dtype=float), output.shape)
    p0 = config.baseline_productivity
    eta = config.crra_shape
    health_regions = -new_deaths
    econ_regions = crra(output / p0, eta)
    health_fed = -np.sum(new_deaths, axis=-1, keepdims=True)
    net = np.sum(output, axis=-1) - config.borrowing_cost * np.sum(subsidy, axis=-1)
    econ_fed = crra(net / np.sum(p0), eta)[..., None]
    return (np.concatenate([health_regions, health_fed], axis=-1),
            np.concatenate([econ_regions, econ_fed], axis=-1))


def normalize(marginal_health, marginal_econ, bounds: NormalizationBounds):
    health = (marginal_health - bounds.health_min) / (bounds.health_max - bounds.health_min)
    econ = (marginal_econ - bounds.econ_min) / (bounds.econ_max - bounds.econ_min)
    return health, econ


def reward(health, econ, config: WelfareConfig):
    """Per-actor instantaneous reward from normalized marginal indices."""
    a = config.effective_alpha
    return a * health + (1.0 - a) * econ


def normalization_window(horizon: int, window: tuple[int, int] | None) -> slice:
    if window is None:
        return slice(0, horizon)
    start, end = window
    if not 0 <= start <= end < horizon:
        raise ValueError(f"window {window} outside episode of {horizon} steps")
    return slice(start, end + 1)


def compute_normalization(
    params: WorldParams,
    state: RegionState,
    horizon: int,
    config: WelfareConfig,
    mod: ModulationParams = ModulationParams(),
    window: tuple[int, int] | None = None,
    rel_tol: float = 1e-12,
) -> NormalizationBounds:
    """Bounds from the fully-open and fully-closed zero-subsidy rollouts.

    ``window`` restricts averaging to steps ``start..end`` (inclusive).
    """
    sl = normalization_window(horizon, window)
    means = {}
    for label, level in (("open", 1), ("closed", NUM_STRINGENCY_LEVELS)):
        schedule = np.full((horizon, params.num_regions), float(level))
        run = simulate_schedule(params, state.copy(), schedule, mod=mod)
        mh, me = marginal_indices(run.new_deaths, run.productivity, run.subsidy, config)
        means[label] = (mh[sl].mean(axis=0), me[sl].mean(axis=0))
    bounds = NormalizationBounds(
        health_min=means["open"][0],
        health_max=means["closed"][0],
        econ_min=means["closed"][1],
        econ_max=means["open"][1],
    )
    for name, lo, hi in (("health", bounds.health_min, bounds.health_max),
                         ("economic", bounds.econ_min, bounds.econ_max)):
        scale = np.maximum(np.abs(lo), np.abs(hi))
        bad = np.nonzero(~(hi - lo > rel_tol * np.maximum(scale, 1e-300)))[0]
        if bad.size:
            raise DegenerateNormalizationError(
                f"{name} index bounds are degenerate for actors {bad.tolist()}: "
                "stringency has no effect under these parameters"
            )
    return bounds


@dataclass
class IndexTrace:
    """Per-day index components with actors on the last axis."""

    marginal_health: np.ndarray
    marginal_econ: np.ndarray
    health: np.ndarray
    econ: np.ndarray
    reward: np.ndarray
    effective_alpha: np.ndarray = field(repr=False)

    def summary(self, window: tuple[int, int] | None = None) -> dict[str, np.ndarray]:
        sl = normalization_window(self.health.shape[0], window)
        h = self.health[sl].mean(axis=0)
        e = self.econ[sl].mean(axis=0)
        a = self.effective_alpha
        return {"health_index": h, "econ_index": e, "welfare": a * h + (1.0 - a) * e}


def index_trace(run: ScheduleResult, config: WelfareConfig) -> IndexTrace:
    if config.bounds is None:
        raise ValueError("WelfareConfig.bounds must be computed before scoring a run")
    mh, me = marginal_indices(run.new_deaths, run.productivity, run.subsidy, config)
    h, e = normalize(mh, me, config.bounds)
    return IndexTrace(mh, me, h, e, reward(h, e, config), config.effective_alpha)


def frontier_shape(h_star: float, e_star: float) -> float:
    if not (0 < h_star < 1 and 0 < e_star < 1):
        raise FrontierBoundaryError(
            f"outcome (H={h_star}, E={e_star}) is not strictly inside the unit square")
    return float(np.log(e_star) / np.log1p(-h_star))


def estimate_alpha_hat(h_star: float, e_star: float) -> tuple[float, float]:
    """Frontier shape x and the health priority that makes ``h_star`` stationary on it.

    The frontier is ``E = (1 - H)**x`` through the observed point; the
    priority solves ``alpha / (1 - alpha) = x (1 - H*)**(x - 1)``.
    """
    x = frontier_shape(h_star, e_star)
    slope = x * (1.0 - h_star) ** (x - 1.0)
    return x, float(slope / (1.0 + slope))


def alpha_hat_grid_search(h_star: float, e_star: float, alphas=None, n_points: int = 200_001):
    """Grid-search cross-check of :func:`estimate_alpha_hat`.

    For each candidate priority the welfare ``alpha H + (1 - alpha) E`` is
    evaluated on a densely sampled frontier; the candidate whose welfare is
    stationary closest to ``h_star`` wins.
    """
    x = frontier_shape(h_star, e_star)
    if alphas is None:
        alphas = np.round(np.arange(1, 1000) * 1e-3, 3)
    alphas = np.asarray(alphas, dtype=float)
    h = np.linspace(0.0, 1.0, n_points)
    e = (1.0 - h) ** x
    mid = 0.5 * (h[1:] + h[:-1])
    # local window around the observed point keeps the grid affordable
    k = np.searchsorted(mid, h_star)
    lo, hi = max(k - 2000, 0), min(k + 2000, mid.size)
    dh = np.diff(h)[lo:hi]
    de = np.diff(e)[lo:hi]
    mid = mid[lo:hi]
    best_alpha, best_gap = float("nan"), np.inf
    for a in alphas:
        dw = a * dh + (1.0 - a) * de
        flips = np.nonzero(np.sign(dw[1:]) != np.sign(dw[:-1]))[0]
        if flips.size == 0:
            continue
        gap = np.min(np.abs(mid[flips] + 0.5 * (mid[1] - mid[0]) - h_star))
        if gap < best_gap:
            best_alpha, best_gap = float(a), gap
    return x, best_alpha
