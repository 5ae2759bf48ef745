"""Daily epidemic and economy dynamics for a set of independent regions.

All state arrays carry regions on the last axis and may carry any number of
leading batch axes (independent episodes simulated in lock-step). Nothing in
this module draws random numbers.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

NUM_STRINGENCY_LEVELS = 10


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class ModulationParams:
    """Multipliers on the transmission slope and the unemployment weights."""

    m_beta: float = 1.0
    m_w: float = 1.0

    def __post_init__(self):
        if not (self.m_beta > 0 and self.m_w > 0):
            raise ValueError(f"modulation multipliers must be > 0, got {self}")


@dataclass
class WorldParams:
    """Calibrated and configured constants of the simulated world.

    Per-region quantities are 1-d arrays of length ``num_regions``;
    ``unemployment_weights`` has shape (num_regions, num_filters) and is
    expressed in persons per stringency level.
    """

    population: np.ndarray
    beta_slope: np.ndarray
    beta_intercept: np.ndarray
    unemployment_weights: np.ndarray
    baseline_unemployment: np.ndarray
    filter_decays: np.ndarray = field(default_factory=lambda: np.array([7.0, 30.0, 120.0]))
    filter_length: int = 120
    mortality: float = 0.02
    recovery: float = 1.0 / 14.0
    stringency_delay: int = 29
    vaccine_onset: int = 297
    vaccine_rate: np.ndarray | float = 3e-3
    working_age_fraction: float = 0.6
    infected_nonworking_fraction: float = 0.1
    output_per_worker: float = 320.81
    num_subsidy_levels: int = 20
    max_daily_subsidy_per_capita: float = 55.0
    initial_stringency: np.ndarray | int = 1
    region_names: list[str] | None = None

    def __post_init__(self):
        self.population = np.asarray(self.population, dtype=float)
        n = self.population.shape[0]
        self.beta_slope = _region_array(self.beta_slope, n, "beta_slope")
        self.beta_intercept = _region_array(self.beta_intercept, n, "beta_intercept")
        self.baseline_unemployment = _region_array(
            self.baseline_unemployment, n, "baseline_unemployment"
        )
        self.vaccine_rate = _region_array(self.vaccine_rate, n, "vaccine_rate")
        self.initial_stringency = _region_array(self.initial_stringency, n, "initial_stringency")
        self.filter_decays = np.atleast_1d(np.asarray(self.filter_decays, dtype=float))
        w = np.asarray(self.unemployment_weights, dtype=float)
        if w.ndim == 1:
            w = np.broadcast_to(w, (n, w.shape[0])).copy()
        self.unemployment_weights = w
        if self.region_names is None:
            self.region_names = [f"region_{i}" for i in range(n)]
        self.region_names = [str(r) for r in self.region_names]
        self.filter_length = int(self.filter_length)
        self.stringency_delay = int(self.stringency_delay)
        self.vaccine_onset = int(self.vaccine_onset)
        self.num_subsidy_levels = int(self.num_subsidy_levels)
        self.validate()

    @property
    def num_regions(self) -> int:
        return self.population.shape[0]

    @property
    def num_filters(self) -> int:
        return self.filter_decays.shape[0]

    def validate(self) -> None:
        n = self.num_regions
        problems = []
        if n < 1:
            problems.append("at least one region is required")
        if np.any(self.population <= 0):
            problems.append("population must be positive")
        if not 0 < self.mortality < 1:
            problems.append("mortality must lie in (0, 1)")
        if not 0 < self.recovery < 1:
            problems.append("recovery must lie in (0, 1)")
        if np.any((self.vaccine_rate <= 0) | (self.vaccine_rate >= 1)):
            problems.append("vaccine_rate must lie in (0, 1)")
        if np.any(self.filter_decays <= 0):
            problems.append("filter_decays must be positive")
        if self.filter_length < 1:
            problems.append("filter_length must be >= 1")
        if not 0 < self.working_age_fraction <= 1:
            problems.append("working_age_fraction must lie in (0, 1]")
        if not 0 <= self.infected_nonworking_fraction <= 1:
            problems.append("infected_nonworking_fraction must lie in [0, 1]")
        if self.output_per_worker <= 0:
            problems.append("output_per_worker must be positive")
        if self.stringency_delay < 0:
            problems.append("stringency_delay must be >= 0")
        if self.unemployment_weights.shape != (n, self.num_filters):
            problems.append(
                f"unemployment_weights must have shape {(n, self.num_filters)}, "
                f"got {self.unemployment_weights.shape}"
            )
        if self.num_subsidy_levels < 2:
            problems.append("num_subsidy_levels must be >= 2")
        levels = self.initial_stringency
        if np.any((levels < 1) | (levels > NUM_STRINGENCY_LEVELS)) or np.any(levels != np.round(levels)):
            problems.append("initial_stringency must be integer levels in 1..10")
        if len(self.region_names) != n:
            problems.append("region_names length must match population")
        if problems:
            raise ValueError("invalid WorldParams: " + "; ".join(problems))

    def filter_kernel(self) -> np.ndarray:
        """Exponential filter bank of shape (K, L + 1); column j weights the change j days ago."""
        lags = np.arange(self.filter_length + 1, dtype=float)
        return np.exp(-lags[None, :] / self.filter_decays[:, None])

    def subset(self, regions: Sequence[int]) -> "WorldParams":
        idx = np.asarray(regions, dtype=int)
        return replace(
            self,
            population=self.population[idx],
            beta_slope=self.beta_slope[idx],
            beta_intercept=self.beta_intercept[idx],
            unemployment_weights=self.unemployment_weights[idx],
            baseline_unemployment=self.baseline_unemployment[idx],
            vaccine_rate=self.vaccine_rate[idx],
            initial_stringency=self.initial_stringency[idx],
            region_names=[self.region_names[i] for i in idx],
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = value.tolist() if isinstance(value, np.ndarray) else value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "WorldParams":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown WorldParams keys: {sorted(unknown)}")
        return cls(**data)


def _region_array(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be scalar or have shape ({n},), got {arr.shape}")
    return arr.copy()


@dataclass
class RegionState:
    """Compartments and policy memory for every region (and batch member).

    ``stringency_history[..., -1]`` is the level in force today and
    ``stringency_history[..., -1 - j]`` the level j days ago. The same
    convention holds for ``delta_stringency_history``.
    """

    susceptible: np.ndarray
    infected: np.ndarray
    recovered: np.ndarray
    vaccinated: np.ndarray
    deaths: np.ndarray
    unemployment: np.ndarray
    stringency_history: np.ndarray
    delta_stringency_history: np.ndarray

    @property
    def stringency(self) -> np.ndarray:
        return self.stringency_history[..., -1]

    def copy(self) -> "RegionState":
        return RegionState(**{k: np.array(v, copy=True) for k, v in self.__dict__.items()})

    def total(self) -> np.ndarray:
        return self.susceptible + self.infected + self.recovered + self.vaccinated


def initial_state(
    params: WorldParams,
    susceptible,
    infected,
    recovered,
    vaccinated=None,
    batch_shape: tuple[int, ...] = (),
    atol: float = 1e-9,
) -> RegionState:
    """Build the day-0 state with padded policy histories.

    Raises ``ValueError`` when compartments do not add up to the population.
    """
    n = params.population
    shape = batch_shape + (params.num_regions,)
    s = np.broadcast_to(np.asarray(susceptible, dtype=float), shape).copy()
    i = np.broadcast_to(np.asarray(infected, dtype=float), shape).copy()
    r = np.broadcast_to(np.asarray(recovered, dtype=float), shape).copy()
    v = np.zeros(shape) if vaccinated is None else np.broadcast_to(
        np.asarray(vaccinated, dtype=float), shape).copy()
    if np.any(s < 0) or np.any(i < 0) or np.any(r < 0) or np.any(v < 0):
        raise ValueError("initial compartments must be non-negative")
    gap = np.abs(s + i + r + v - n)
    if np.any(gap > atol * n):
        bad = np.unique(np.nonzero(gap > atol * n)[-1]).tolist()
        raise ValueError(f"initial compartments do not sum to population for regions {bad}")
    depth = max(params.stringency_delay, 1) + 1
    history = np.broadcast_to(params.initial_stringency[:, None], shape + (depth,)).copy()
    deltas = np.zeros(shape + (params.filter_length + 1,))
    u = np.broadcast_to(softplus(0.0) + params.baseline_unemployment, shape).copy()
    return RegionState(
        susceptible=s,
        infected=i,
        recovered=r,
        vaccinated=v,
        deaths=params.mortality * r,
        unemployment=u,
        stringency_history=history,
        delta_stringency_history=deltas,
    )


def transmission_rate(stringency_delayed, params: WorldParams, mod: ModulationParams = ModulationParams(),
                      region=None):
    """Transmission rate for the delayed stringency level, clamped at zero.

    With ``region=None`` the region axis is the last axis of
    ``stringency_delayed``.
    """
    slope = params.beta_slope if region is None else params.beta_slope[region]
    intercept = params.beta_intercept if region is None else params.beta_intercept[region]
    rate = mod.m_beta * slope * np.asarray(stringency_delayed, dtype=float) + intercept
    return np.maximum(rate, 0.0)


def sir_step(state: RegionState, beta, new_vaccinations, params: WorldParams) -> RegionState:
    """Advance the S, I, R, V compartments one day; deaths are ``mortality * R``.

    Vaccinations are truncated to the susceptibles left after new infections.
    """
    n = params.population
    s, i, r, v = state.susceptible, state.infected, state.recovered, state.vaccinated
    new_infections = np.minimum(beta * s * i / n, s)
    applied = np.clip(new_vaccinations, 0.0, s - new_infections)
    recoveries = params.recovery * i
    r_next = r + recoveries
    return replace(
        state,
        susceptible=s - new_infections - applied,
        infected=i + new_infections - recoveries,
        recovered=r_next,
        vaccinated=v + applied,
        deaths=params.mortality * r_next,
    )


def vaccination_supply(t: int, params: WorldParams, region=None):
    """New vaccine doses available on day ``t`` (persons)."""
    daily = params.vaccine_rate * params.population
    if region is not None:
        daily = daily[region]
    return daily * float(t >= params.vaccine_onset)


def filtered_stringency_changes(delta_history: np.ndarray, params: WorldParams) -> np.ndarray:
    """Response of each exponential filter to the stringency-change history, shape (..., N, K)."""
    kernel = params.filter_kernel()[:, ::-1]  # oldest lag first, matching history layout
    return delta_history @ kernel.T


def unemployment_step(state: RegionState, params: WorldParams,
                      mod: ModulationParams = ModulationParams()) -> np.ndarray:
    """Unemployed persons implied by the stringency-change history in ``state``."""
    responses = filtered_stringency_changes(state.delta_stringency_history, params)
    excess = np.sum(mod.m_w * params.unemployment_weights * responses, axis=-1)
    return softplus(excess) + params.baseline_unemployment


def workforce(state: RegionState, params: WorldParams) -> np.ndarray:
    available = params.population - state.deaths - params.infected_nonworking_fraction * state.infected
    return np.maximum(0.0, params.working_age_fraction * available - state.unemployment)


def productivity(workforce_count, subsidy_inflow, params: WorldParams):
    return params.output_per_worker * workforce_count + subsidy_inflow


def subsidy_per_capita(level, params: WorldParams):
    """Daily direct payment per person for a planner level in 1..num_subsidy_levels."""
    level = np.asarray(level)
    if np.any((level < 1) | (level > params.num_subsidy_levels)):
        raise ValueError(f"subsidy level must lie in 1..{params.num_subsidy_levels}, got {level}")
    return params.max_daily_subsidy_per_capita * (level - 1) / (params.num_subsidy_levels - 1)


def subsidy_inflow(level, params: WorldParams, region=None):
    """Daily currency added to each region's output for a planner level.

    A scalar level applies to all regions; an array level must broadcast
    against the region axis after a trailing axis is added.
    """
    per_capita = np.asarray(subsidy_per_capita(level, params), dtype=float)
    if region is not None:
        return per_capita * params.population[region]
    return per_capita[..., None] * params.population


def baseline_productivity(params: WorldParams) -> np.ndarray:
    """Daily output with no infections, deaths, subsidies or stringency changes."""
    baseline_u = softplus(0.0) + params.baseline_unemployment
    workers = np.maximum(0.0, params.working_age_fraction * params.population - baseline_u)
    return params.output_per_worker * workers


def push_stringency(state: RegionState, stringency) -> RegionState:
    """Record today's levels, shifting both histories by one day."""
    level = np.asarray(stringency, dtype=float)
    level = np.broadcast_to(level, state.stringency.shape)
    change = level - state.stringency_history[..., -1]
    history = np.concatenate([state.stringency_history[..., 1:], level[..., None]], axis=-1)
    deltas = np.concatenate([state.delta_stringency_history[..., 1:], change[..., None]], axis=-1)
    return replace(state, stringency_history=history, delta_stringency_history=deltas)


def delayed_stringency(state: RegionState, params: WorldParams) -> np.ndarray:
    return state.stringency_history[..., -1 - params.stringency_delay]


def world_step(
    state: RegionState,
    stringency,
    subsidy,
    t: int,
    params: WorldParams,
    mod: ModulationParams = ModulationParams(),
    beta_override=None,
) -> tuple[RegionState, np.ndarray]:
    """Advance every region from day ``t - 1`` to day ``t``.

    ``stringency`` holds today's levels per region and ``subsidy`` the daily
    inflow per region in currency. ``beta_override`` replaces the
    stringency-driven transmission rate (used when replaying inferred rates).
    Returns the new state and each region's productivity.
    """
    state = push_stringency(state, stringency)
    if beta_override is None:
        beta = transmission_rate(delayed_stringency(state, params), params, mod)
    else:
        beta = np.asarray(beta_override, dtype=float)
    state = sir_step(state, beta, vaccination_supply(t, params), params)
    state = replace(state, unemployment=unemployment_step(state, params, mod))
    output = productivity(workforce(state, params), subsidy, params)
    return state, output


@dataclass
class ScheduleResult:
    """Daily outputs of a fixed-schedule run, each with shape (T, ..., N)."""

    susceptible: np.ndarray
    infected: np.ndarray
    recovered: np.ndarray
    vaccinated: np.ndarray
    deaths: np.ndarray
    new_deaths: np.ndarray
    unemployment: np.ndarray
    productivity: np.ndarray
    stringency: np.ndarray
    subsidy: np.ndarray


def simulate_schedule(
    params: WorldParams,
    state: RegionState,
    stringency: np.ndarray,
    subsidy: np.ndarray | None = None,
    mod: ModulationParams = ModulationParams(),
    start_day: int = 1,
    beta: np.ndarray | None = None,
) -> ScheduleResult:
    """Run the world under fixed per-step stringency levels and subsidy inflows.

    ``state`` is the world on day ``start_day - 1``; row ``s`` of the
    schedules drives day ``start_day + s``. ``stringency`` has shape (T, N)
    and ``subsidy`` the same shape in currency per day (default zero).
    ``beta``, if given, supplies the transmission rate for every step in
    place of the stringency-driven one.
    """
    stringency = np.asarray(stringency, dtype=float)
    horizon = stringency.shape[0]
    if subsidy is None:
        subsidy = np.zeros_like(stringency)
    subsidy = np.asarray(subsidy, dtype=float)
    if subsidy.shape[0] != horizon:
        raise ValueError("stringency and subsidy schedules must have equal length")
    rows: dict[str, list] = {k: [] for k in ScheduleResult.__dataclass_fields__}
    for step in range(horizon):
        prev_deaths = state.deaths
        override = None if beta is None else beta[step]
        state, output = world_step(state, stringency[step], subsidy[step], start_day + step, params, mod,
                                   beta_override=override)
        rows["susceptible"].append(state.susceptible)
        rows["infected"].append(state.infected)
        rows["recovered"].append(state.recovered)
        rows["vaccinated"].append(state.vaccinated)
        rows["deaths"].append(state.deaths)
        rows["new_deaths"].append(state.deaths - prev_deaths)
        rows["unemployment"].append(state.unemployment)
        rows["productivity"].append(output)
        rows["stringency"].append(state.stringency)
        rows["subsidy"].append(np.broadcast_to(subsidy[step], state.deaths.shape))
    return ScheduleResult(**{k: np.stack(v) for k, v in rows.items()})
