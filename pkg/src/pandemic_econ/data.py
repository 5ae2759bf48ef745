"""Ingestion and validation of the calibration CSVs.

Expected files in a data directory::

    stringency.csv    date, region, level
    deaths.csv        date, region, cumulative
    unemployment.csv  year-month, region, rate
    population.csv    region, persons
    subsidies.csv     date, total_amount
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

SCHEMAS = {
    "stringency.csv": ["date", "region", "level"],
    "deaths.csv": ["date", "region", "cumulative"],
    "unemployment.csv": ["year-month", "region", "rate"],
    "population.csv": ["region", "persons"],
    "subsidies.csv": ["date", "total_amount"],
}


class DataError(ValueError):
    """Schema or content problem in the calibration inputs; one message per problem."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class CalibrationDataset:
    """Daily-aligned observations; per-region arrays have shape (T, N)."""

    dates: list[str]
    regions: list[str]
    population: np.ndarray
    stringency: np.ndarray
    deaths: np.ndarray
    unemployment_rate: np.ndarray
    payments: list[tuple[str, float]]

    @property
    def start_date(self) -> str:
        return self.dates[0]

    @property
    def num_days(self) -> int:
        return len(self.dates)

    def day_index(self, date: str) -> int:
        return (dt.date.fromisoformat(date) - dt.date.fromisoformat(self.start_date)).days

    def validate(self) -> None:
        problems = []
        if not self.regions:
            problems.append("empty region set")
        if np.any(~np.isfinite(self.stringency)) or np.any(
                (self.stringency < 1) | (self.stringency > 10) | (self.stringency != np.round(self.stringency))):
            problems.append("stringency levels must be integers in 1..10")
        drops = np.nonzero(np.diff(self.deaths, axis=0) < 0)
        if drops[0].size:
            bad = sorted({self.dates[t + 1] for t in drops[0]})
            problems.append(f"cumulative deaths decrease on {bad[:10]}")
        if np.any(self.deaths < 0):
            problems.append("deaths must be non-negative")
        if np.any(~np.isfinite(self.unemployment_rate)) or np.any(
                (self.unemployment_rate < 0) | (self.unemployment_rate > 1)):
            problems.append("unemployment rates must be fractions in [0, 1]")
        if np.any(self.population <= 0):
            problems.append("population must be positive")
        if problems:
            raise DataError(problems)


def _read(path: Path, columns: list[str], problems: list[str]) -> pd.DataFrame | None:
    if not path.exists():
        problems.append(f"{path.name}: file not found")
        return None
    df = pd.read_csv(path, dtype={"region": str}, float_precision="round_trip")
    missing = [c for c in columns if c not in df.columns]
    if missing:
        problems.append(f"{path.name}: missing column(s) {', '.join(missing)}")
        return None
    extra = [c for c in df.columns if c not in columns]
    if extra:
        problems.append(f"{path.name}: unexpected column(s) {', '.join(extra)}")
        return None
    return df


def _daily_wide(df: pd.DataFrame, value: str, name: str, problems: list[str]) -> pd.DataFrame | None:
    try:
        dates = pd.to_datetime(df["date"], format="%Y-%m-%d")
    except (ValueError, TypeError) as exc:
        problems.append(f"{name}: dates must be ISO-8601 (YYYY-MM-DD): {exc}")
        return None
    if df.duplicated(["date", "region"]).any():
        problems.append(f"{name}: duplicate (date, region) rows")
        return None
    wide = df.assign(date=dates).pivot(index="date", columns="region", values=value).sort_index()
    expected = pd.date_range(wide.index.min(), wide.index.max(), freq="D")
    if len(expected) != len(wide.index):
        problems.append(f"{name}: dates are not contiguous daily")
        return None
    if wide.isna().any().any():
        holes = wide.columns[wide.isna().any()].tolist()
        problems.append(f"{name}: missing days for regions {holes}")
        return None
    return wide


def load_dataset(data_dir) -> CalibrationDataset:
    """Read, align and validate the five CSVs; raises :class:`DataError`."""
    root = Path(data_dir)
    problems: list[str] = []
    frames = {name: _read(root / name, cols, problems) for name, cols in SCHEMAS.items()}
    if problems:
        raise DataError(problems)

    pop = frames["population.csv"]
    if pop.empty:
        raise DataError(["population.csv: empty region set"])
    if pop["region"].duplicated().any():
        raise DataError(["population.csv: duplicate regions"])
    regions = pop["region"].tolist()

    stringency = _daily_wide(frames["stringency.csv"], "level", "stringency.csv", problems)
    deaths = _daily_wide(frames["deaths.csv"], "cumulative", "deaths.csv", problems)
    if problems:
        raise DataError(problems)
    for name, wide in (("stringency.csv", stringency), ("deaths.csv", deaths)):
        absent = sorted(set(regions) - set(wide.columns))
        unknown = sorted(set(wide.columns) - set(regions))
        if absent:
            problems.append(f"{name}: regions {absent} missing")
        if unknown:
            problems.append(f"{name}: regions {unknown} not in population.csv")
    if problems:
        raise DataError(problems)
    if not stringency.index.equals(deaths.index):
        raise DataError(["stringency.csv and deaths.csv must cover the same dates"])
    index = stringency.index

    unemp = frames["unemployment.csv"]
    try:
        months = pd.PeriodIndex(unemp["year-month"].astype(str), freq="M")
    except (ValueError, TypeError) as exc:
        raise DataError([f"unemployment.csv: year-month must look like YYYY-MM: {exc}"]) from exc
    monthly = unemp.assign(month=months).pivot(index="month", columns="region", values="rate")
    absent = sorted(set(regions) - set(monthly.columns))
    if absent:
        raise DataError([f"unemployment.csv: regions {absent} missing"])
    day_months = index.to_period("M")
    uncovered = sorted({str(m) for m in day_months if m not in monthly.index})
    if uncovered:
        raise DataError([f"unemployment.csv: no rate for months {uncovered}"])
    daily_rate = monthly.loc[day_months, regions].to_numpy(dtype=float)

    subs = frames["subsidies.csv"]
    payments = []
    for date, amount in zip(subs["date"].astype(str), subs["total_amount"]):
        try:
            dt.date.fromisoformat(date)
        except ValueError:
            problems.append(f"subsidies.csv: bad date {date!r}")
            continue
        if not np.isfinite(amount) or amount < 0:
            problems.append(f"subsidies.csv: amount on {date} must be non-negative")
        payments.append((date, float(amount)))
    if problems:
        raise DataError(problems)

    ds = CalibrationDataset(
        dates=[d.strftime("%Y-%m-%d") for d in index],
        regions=regions,
        population=pop["persons"].to_numpy(dtype=float),
        stringency=stringency[regions].to_numpy(dtype=float),
        deaths=deaths[regions].to_numpy(dtype=float),
        unemployment_rate=daily_rate,
        payments=payments,
    )
    ds.validate()
    return ds


def payments_to_inflow(payments, start_date: str, horizon: int, population: np.ndarray,
                       spread_days: int = 90) -> np.ndarray:
    """Daily per-region inflow (T, N) from lump-sum payments.

    Each payment is spread evenly over ``spread_days`` starting on its date
    and split across regions in proportion to population.
    """
    start = dt.date.fromisoformat(start_date)
    share = np.asarray(population, dtype=float) / np.sum(population)
    inflow = np.zeros((horizon, share.size))
    for date, amount in payments:
        day = (dt.date.fromisoformat(str(date)) - start).days
        lo, hi = max(day, 0), min(day + spread_days, horizon)
        if hi > lo:
            inflow[lo:hi] += float(amount) / spread_days * share
    return inflow


def write_dataset(ds: CalibrationDataset, out_dir) -> None:
    """Write ``ds`` back to the five-CSV layout (monthly rates are re-aggregated)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def long(values, col):
        df = pd.DataFrame(values, index=pd.Index(ds.dates, name="date"), columns=ds.regions)
        return df.reset_index().melt(id_vars="date", var_name="region", value_name=col)

    long(ds.stringency.astype(int), "level").to_csv(out / "stringency.csv", index=False)
    long(ds.deaths, "cumulative").to_csv(out / "deaths.csv", index=False, float_format="%.17g")
    idx = pd.to_datetime(ds.dates)
    monthly = pd.DataFrame(ds.unemployment_rate, index=idx, columns=ds.regions)
    monthly = monthly.groupby(idx.to_period("M")).mean()
    monthly.index = monthly.index.astype(str)
    monthly.index.name = "year-month"
    monthly.reset_index().melt(id_vars="year-month", var_name="region", value_name="rate").to_csv(
        out / "unemployment.csv", index=False, float_format="%.17g")
    pd.DataFrame({"region": ds.regions, "persons": ds.population}).to_csv(
        out / "population.csv", index=False, float_format="%.17g")
    pd.DataFrame(ds.payments, columns=["date", "total_amount"]).to_csv(
        out / "subsidies.csv", index=False, float_format="%.17g")
