import numpy as np
import pandas as pd
import pytest

from pandemic_econ.data import DataError, load_dataset, payments_to_inflow, write_dataset
from pandemic_econ.fixtures import write_toy_csvs


@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    write_toy_csvs(out, horizon=120)
    return out


def _copy(src, dst):
    for f in src.iterdir():
        (dst / f.name).write_text(f.read_text())
    return dst


def test_load_shapes(toy_dir):
    ds = load_dataset(toy_dir)
    assert ds.num_days == 120 and len(ds.regions) == 5
    assert ds.stringency.shape == ds.deaths.shape == ds.unemployment_rate.shape == (120, 5)
    assert ds.start_date == "2020-03-22"
    assert ds.day_index("2020-03-25") == 3


def test_monthly_rates_expand_to_days(toy_dir):
    ds = load_dataset(toy_dir)
    march = [i for i, d in enumerate(ds.dates) if d.startswith("2020-03")]
    assert np.ptp(ds.unemployment_rate[march], axis=0).max() == 0.0


def test_write_round_trip(toy_dir, tmp_path):
    ds = load_dataset(toy_dir)
    write_dataset(ds, tmp_path)
    again = load_dataset(tmp_path)
    np.testing.assert_array_equal(again.deaths, ds.deaths)
    np.testing.assert_allclose(again.unemployment_rate, ds.unemployment_rate, rtol=1e-12)
    assert again.payments == ds.payments


def test_missing_column_is_named(toy_dir, tmp_path):
    d = _copy(toy_dir, tmp_path)
    df = pd.read_csv(d / "deaths.csv").drop(columns="cumulative")
    df.to_csv(d / "deaths.csv", index=False)
    with pytest.raises(DataError, match="deaths.csv: missing column.*cumulative"):
        load_dataset(d)


def test_missing_file_listed(toy_dir, tmp_path):
    d = _copy(toy_dir, tmp_path)
    (d / "subsidies.csv").unlink()
    with pytest.raises(DataError) as err:
        load_dataset(d)
    assert any("subsidies.csv" in p for p in err.value.problems)


def test_empty_region_set(toy_dir, tmp_path):
    d = _copy(toy_dir, tmp_path)
    (d / "population.csv").write_text("region,persons\n")
    with pytest.raises(DataError, match="empty region set"):
        load_dataset(d)


def test_decreasing_deaths_report_dates(toy_dir, tmp_path):
    d = _copy(toy_dir, tmp_path)
    df = pd.read_csv(d / "deaths.csv")
    row = df.index[(df["date"] == "2020-05-01")][0]
    df.loc[row, "cumulative"] = -1.0
    df.to_csv(d / "deaths.csv", index=False)
    with pytest.raises(DataError, match="2020-05-0[12]"):
        load_dataset(d)


def test_gap_in_dates(toy_dir, tmp_path):
    d = _copy(toy_dir, tmp_path)
    df = pd.read_csv(d / "stringency.csv")
    df[df["date"] != "2020-04-10"].to_csv(d / "stringency.csv", index=False)
    with pytest.raises(DataError, match="contiguous"):
        load_dataset(d)


def test_uncovered_month(toy_dir, tmp_path):
    d = _copy(toy_dir, tmp_path)
    df = pd.read_csv(d / "unemployment.csv")
    df[df["year-month"] != "2020-05"].to_csv(d / "unemployment.csv", index=False)
    with pytest.raises(DataError, match="2020-05"):
        load_dataset(d)


def test_stringency_out_of_range(toy_dir, tmp_path):
    d = _copy(toy_dir, tmp_path)
    df = pd.read_csv(d / "stringency.csv")
    df.loc[0, "level"] = 11
    df.to_csv(d / "stringency.csv", index=False)
    with pytest.raises(DataError, match="1..10"):
        load_dataset(d)


def test_payments_spread_and_split():
    inflow = payments_to_inflow([("2020-03-24", 900.0)], "2020-03-22", 200, np.array([1.0, 2.0]),
                                spread_days=90)
    assert inflow[:2].sum() == 0.0
    np.testing.assert_allclose(inflow[2], [10.0 / 3, 20.0 / 3])
    np.testing.assert_allclose(inflow.sum(), 900.0)
    assert inflow[92:].sum() == 0.0


def test_payment_before_start_is_clipped():
    inflow = payments_to_inflow([("2020-03-12", 90.0)], "2020-03-22", 100, np.array([1.0]), 90)
    np.testing.assert_allclose(inflow.sum(), 80.0)
