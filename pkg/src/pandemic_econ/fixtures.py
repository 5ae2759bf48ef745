"""Synthetic five-region world used by tests, examples and the toy pipeline.

The generator forward-simulates known parameters under a plausible
"recorded" policy, so calibration on its output has a known answer.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .data import payments_to_inflow
from .env import EpisodeConfig, InitialConditions
from .sim import WorldParams, simulate_schedule

TOY_REGIONS = ["alder", "birch", "cedar", "dogwood", "elm"]
TOY_POPULATION = np.array([1.2e6, 2.5e6, 0.6e6, 3.4e6, 1.8e6])


def toy_world(**overrides) -> WorldParams:
    pop = TOY_POPULATION
    per_capita_w = np.array([
        [0.004, 0.006, 0.016],
        [0.003, 0.007, 0.018],
        [0.005, 0.005, 0.013],
        [0.004, 0.008, 0.017],
        [0.002, 0.006, 0.015],
    ])
    kwargs = dict(
        population=pop,
        beta_slope=np.array([-0.024, -0.027, -0.022, -0.026, -0.025]),
        beta_intercept=np.array([0.29, 0.31, 0.27, 0.30, 0.28]),
        unemployment_weights=per_capita_w * 0.6 * pop[:, None],
        baseline_unemployment=0.6 * pop * np.array([0.035, 0.04, 0.03, 0.045, 0.038]),
        filter_decays=np.array([7.0, 30.0, 200.0]),
        filter_length=360,
        region_names=list(TOY_REGIONS),
        initial_stringency=1,
    )
    kwargs.update(overrides)
    return WorldParams(**kwargs)


def toy_initial(params: WorldParams, infected_fraction: float = 2e-4) -> InitialConditions:
    n = params.population
    infected = infected_fraction * n * np.array([1.0, 1.5, 0.8, 1.2, 0.9])[: n.size]
    recovered = 5.0 * infected
    return InitialConditions(n - infected - recovered, infected, recovered, np.zeros_like(n))


def toy_recorded_stringency(horizon: int, num_regions: int = 5) -> np.ndarray:
    """Nondecreasing step schedules standing in for observed policy."""
    onsets = [5, 9, 3, 12, 7]
    first = [6, 7, 5, 8, 6]
    second = [7, 8, 6, 8, 7]
    later = [150, 170, 140, 200, 160]
    out = np.ones((horizon, num_regions))
    for i in range(num_regions):
        k = i % 5
        out[onsets[k]:, i] = first[k]
        out[later[k]:, i] = second[k]
    return out


def toy_payments() -> list[tuple[str, float]]:
    """Lump-sum federal payment dates and totals."""
    total_pop = float(TOY_POPULATION.sum())
    return [("2020-04-15", 1200.0 * total_pop), ("2020-12-29", 600.0 * total_pop)]


@dataclass
class ToyData:
    params: WorldParams
    initial: InitialConditions
    stringency: np.ndarray
    subsidy: np.ndarray
    start_date: str
    daily_unemployment: np.ndarray
    cumulative_deaths: np.ndarray


def generate_toy_data(horizon: int = 300, start_date: str = "2020-03-22") -> ToyData:
    params = toy_world()
    initial = toy_initial(params)
    stringency = toy_recorded_stringency(horizon, params.num_regions)
    subsidy = payments_to_inflow(toy_payments(), start_date, horizon, params.population)
    # day 0 of the data is the initial condition; the run covers days 1..horizon-1
    run = simulate_schedule(params, initial.state(params), stringency[1:], subsidy[1:])
    deaths = np.vstack([params.mortality * initial.recovered, run.deaths])
    unemployment = np.vstack([initial.state(params).unemployment, run.unemployment])
    return ToyData(params, initial, stringency, subsidy, start_date, unemployment, deaths)


def write_toy_csvs(out_dir, horizon: int = 300, start_date: str = "2020-03-22") -> ToyData:
    """Write the five calibration CSVs for the toy world into ``out_dir``."""
    data = generate_toy_data(horizon, start_date)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = data.params
    dates = pd.date_range(start_date, periods=horizon, freq="D")
    names = params.region_names

    def long(values, col):
        df = pd.DataFrame(values, index=dates.strftime("%Y-%m-%d"), columns=names)
        df.index.name = "date"
        return df.reset_index().melt(id_vars="date", var_name="region", value_name=col)

    long(data.stringency.astype(int), "level").to_csv(out / "stringency.csv", index=False)
    long(data.cumulative_deaths, "cumulative").to_csv(out / "deaths.csv", index=False, float_format="%.17g")
    rate = data.daily_unemployment / (params.working_age_fraction * params.population)
    monthly = pd.DataFrame(rate, index=dates, columns=names).groupby(dates.to_period("M")).mean()
    monthly.index = monthly.index.astype(str)
    monthly.index.name = "year-month"
    monthly.reset_index().melt(id_vars="year-month", var_name="region", value_name="rate").to_csv(
        out / "unemployment.csv", index=False, float_format="%.17g")
    pd.DataFrame({"region": names, "persons": params.population}).to_csv(
        out / "population.csv", index=False, float_format="%.17g")
    pd.DataFrame(toy_payments(), columns=["date", "total_amount"]).to_csv(
        out / "subsidies.csv", index=False, float_format="%.17g")
    return data


def toy_episode_config(**overrides) -> EpisodeConfig:
    return EpisodeConfig(**overrides)
