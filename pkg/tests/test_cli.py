import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from pandemic_econ import cli
from pandemic_econ.config import ConfigError, PUBLISHED_CONSTANTS, RunConfig, load_config, pin_published_defaults
from pandemic_econ.fixtures import toy_world
from pandemic_econ.policy import load_checkpoint

DATA = Path(__file__).resolve().parents[1] / "data" / "toy"


def write_config(path: Path, data: dict) -> Path:
    path.write_text(yaml.safe_dump(data))
    return path


def run(tmp_path, command, config: dict, *extra) -> tuple[int, Path]:
    out = tmp_path / command
    cfg = write_config(tmp_path / f"{command}.yaml", config)
    code = cli.main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def test_missing_subcommand_exits_2():
    with pytest.raises(SystemExit) as err:
        cli.main([])
    assert err.value.code == 2


def test_unknown_config_key_exits_2(tmp_path, capsys):
    code, _ = run(tmp_path, "simulate", {"simulate": {"polcy": "fixed"}})
    assert code == 2
    assert "polcy" in capsys.readouterr().err


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="trian"):
        RunConfig.from_dict({"trian": {}})


def test_config_round_trip(tmp_path):
    cfg = RunConfig.from_dict({"seed": 7, "train": {"iterations": 3}, "world": {"mortality": 0.01}})
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert load_config(None) == RunConfig()


def test_published_defaults_pin_constants():
    cfg = pin_published_defaults(RunConfig.from_dict({"world": {"mortality": 0.5}, "episode": {"horizon": 10,
                                                                                          "analysis_end": 10}}))
    assert cfg.world["mortality"] == PUBLISHED_CONSTANTS["world"]["mortality"]
    assert cfg.episode.horizon == 540
    assert cfg.calibration.delay_candidates == (0, 60)


def test_numeric_failure_exits_3(tmp_path, monkeypatch):
    def boom(cfg, out):
        raise FloatingPointError("overflow")

    monkeypatch.setitem(cli.COMMANDS, "simulate", boom)
    code, _ = run(tmp_path, "simulate", {})
    assert code == 3


def test_calibrate_needs_data(tmp_path):
    code, _ = run(tmp_path, "calibrate", {})
    assert code == 2


def test_calibrate_bad_schema_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad"
    bad.mkdir()
    for f in DATA.iterdir():
        (bad / f.name).write_text(f.read_text())
    pd.read_csv(bad / "population.csv").rename(columns={"persons": "people"}).to_csv(
        bad / "population.csv", index=False)
    code, _ = run(tmp_path, "calibrate", {}, "--data", str(bad))
    assert code == 2
    assert "persons" in capsys.readouterr().err


def test_calibrate_recovers_bundled_toy(tmp_path):
    code, out = run(tmp_path, "calibrate", {"calibration": {"filter_length": 360,
                                                            "unemployment_target": "monthly"}},
                    "--data", str(DATA))
    assert code == 0
    world = json.loads((out / "params.json").read_text())["world"]
    truth = toy_world()
    np.testing.assert_allclose(world["beta_slope"], truth.beta_slope, atol=1e-9)
    np.testing.assert_allclose(world["beta_intercept"], truth.beta_intercept, atol=1e-9)
    report = json.loads((out / "fit_report.json").read_text())
    assert report["delay"] == truth.stringency_delay
    assert report["unemployment_loss"] <= 1e-8


@pytest.mark.parametrize("level, expected", [(1, (0.0, 1.0)), (10, (1.0, 0.0))])
def test_simulate_fixed_endpoints(tmp_path, level, expected):
    code, out = run(tmp_path, "simulate", {"simulate": {"policy": "fixed", "stringency_level": level}})
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())["episode"]
    np.testing.assert_allclose(summary["health_index"], expected[0], atol=1e-9)
    np.testing.assert_allclose(summary["econ_index"], expected[1], atol=1e-9)
    df = pd.read_csv(out / "trajectory.csv")
    assert len(df) == 540 * 6 and df["date"].iloc[0] == "2020-03-23"


def test_simulate_replay_of_recorded_rollout(tmp_path):
    code, first = run(tmp_path, "simulate", {"simulate": {"policy": "replay"}})
    assert code == 0
    again_cfg = {"simulate": {"policy": "replay"}, "paths": {"replay": str(first / "trajectory.csv")}}
    out = tmp_path / "again"
    code = cli.main(["simulate", "--config", str(write_config(tmp_path / "again.yaml", again_cfg)),
                     "--out", str(out)])
    assert code == 0
    a = json.loads((first / "summary.json").read_text())
    b = json.loads((out / "summary.json").read_text())
    assert a["episode"] == b["episode"]


def test_simulate_replay_too_short(tmp_path, capsys):
    code, first = run(tmp_path, "simulate", {"episode": {"horizon": 60, "analysis_end": 60},
                                             "simulate": {"policy": "replay"}})
    assert code == 0
    cfg = {"simulate": {"policy": "replay"}, "paths": {"replay": str(first / "trajectory.csv")}}
    code, _ = run(tmp_path, "simulate", cfg)
    assert code == 2
    assert "covers 60 days but 540" in capsys.readouterr().err


def test_simulate_is_idempotent(tmp_path):
    cfg = {"simulate": {"policy": "fixed", "stringency_level": 4, "subsidy_level": 7}}
    _, out = run(tmp_path, "simulate", cfg)
    first = (out / "trajectory.csv").read_bytes(), (out / "summary.json").read_bytes()
    _, out = run(tmp_path, "simulate", cfg)
    assert ((out / "trajectory.csv").read_bytes(), (out / "summary.json").read_bytes()) == first


def _frontier_point(x, alpha):
    # interior optimum of alpha H + (1 - alpha) (1 - H)^x
    h = 1.0 - (alpha / ((1.0 - alpha) * x)) ** (1.0 / (x - 1.0))
    return h, (1.0 - h) ** x


def test_alpha_from_outcomes(tmp_path):
    pairs = {"a": (2.0, 0.5), "b": (4.0, 0.5), "c": (4.0, 0.2)}
    rows = [(name, *_frontier_point(x, a)) for name, (x, a) in pairs.items()]
    path = tmp_path / "outcomes.csv"
    pd.DataFrame(rows, columns=["actor", "health_index", "econ_index"]).to_csv(path, index=False)
    code, out = run(tmp_path, "alpha", {"paths": {"outcomes": str(path)}})
    assert code == 0
    payload = json.loads((out / "alpha.json").read_text())
    for k, (x, a) in enumerate(pairs.values()):
        assert payload["alpha_hat"][k] == pytest.approx(a, abs=1e-6)
        assert payload["frontier_shape"][k] == pytest.approx(x, abs=1e-6)
        assert payload["grid_alpha_hat"][k] == pytest.approx(a, abs=1e-3)


def test_alpha_from_replay_feeds_calibrated_source(tmp_path):
    code, out = run(tmp_path, "alpha", {})
    assert code == 0
    payload = json.loads((out / "alpha.json").read_text())
    assert payload["window"] == [0, 283]
    assert all(a is not None and 0 < a < 1 for a in payload["alpha_hat"])
    cfg = {"welfare": {"alpha_source": "calibrated"}, "paths": {"alpha": str(out / "alpha.json")}}
    code, sim = run(tmp_path, "simulate", cfg)
    assert code == 0
    summary = json.loads((sim / "summary.json").read_text())
    np.testing.assert_allclose(summary["alpha"], payload["alpha_hat"])


def test_calibrated_alpha_without_path_exits_2(tmp_path):
    code, _ = run(tmp_path, "simulate", {"welfare": {"alpha_source": "calibrated"}})
    assert code == 2


SHORT = {"episode": {"horizon": 120, "analysis_end": 120}}


def test_train_zero_iterations_then_evaluate(tmp_path):
    cfg = dict(SHORT, train={"iterations": 0, "seeds": [0, 1]}, evaluate={"episodes": 4})
    code, out = run(tmp_path, "train", cfg, "--seed", "10")
    assert code == 0
    files = sorted((out / "checkpoints").glob("seed_*.json"))
    assert [f.name for f in files] == ["seed_10.json", "seed_11.json"]
    agent, planner, meta = load_checkpoint(files[0])
    assert not agent.W.any() and not planner.b.any()
    assert meta["seed"] == 10
    cfg["paths"] = {"checkpoint": str(out / "checkpoints")}
    code, ev = run(tmp_path, "evaluate", cfg)
    assert code == 0
    summary = json.loads((ev / "evaluation.json").read_text())
    assert summary["checkpoints"] == ["seed_10.json", "seed_11.json"]
    assert summary["lift"] is not None
    assert len(pd.read_csv(ev / "evaluation.csv")) == (2 * 4 + 4) * 6


def test_train_short_run_writes_curves(tmp_path):
    cfg = dict(SHORT, train={"iterations": 2, "episodes_per_iteration": 2, "seeds": [0]})
    code, out = run(tmp_path, "train", cfg)
    assert code == 0
    curves = pd.read_csv(out / "learning_curves.csv")
    assert list(curves["iteration"]) == [0, 1]


def test_sensitivity_identity_cell(tmp_path):
    train_cfg = dict(SHORT, train={"iterations": 1, "episodes_per_iteration": 2, "seeds": [0]})
    code, tr = run(tmp_path, "train", train_cfg)
    assert code == 0
    ckpt = str(tr / "checkpoints" / "seed_0.json")
    base = dict(SHORT, paths={"checkpoint": ckpt})
    code, ev = run(tmp_path, "evaluate", dict(base, evaluate={"episodes": 1, "greedy": True}))
    assert code == 0
    code, sim = run(tmp_path, "simulate", dict(base, simulate={"policy": "replay"}))
    assert code == 0
    grid = {"m_beta": [0.9, 1.0], "m_w": [1.0, 1.5]}
    code, out = run(tmp_path, "sensitivity", dict(base, sensitivity=grid))
    assert code == 0
    trained = json.loads((ev / "evaluation.json").read_text())["trained_welfare"]
    replayed = json.loads((sim / "summary.json").read_text())["episode"]["welfare"]
    ck = pd.read_csv(out / "checkpoint" / "sensitivity.csv", float_precision="round_trip")
    rp = pd.read_csv(out / "replay" / "sensitivity.csv", float_precision="round_trip")
    ident = (ck["m_beta"] == 1.0) & (ck["m_w"] == 1.0)
    assert ck.loc[ident, "welfare"].tolist() == trained
    assert rp.loc[ident, "welfare"].tolist() == replayed
    ratio = json.loads((out / "sensitivity_ratio.json").read_text())
    assert np.array(ratio["federal"]).shape == (2, 2)


def test_sensitivity_checkpoint_needs_path(tmp_path):
    code, _ = run(tmp_path, "sensitivity", dict(SHORT, sensitivity={"policies": ["checkpoint"]}))
    assert code == 2


def test_published_defaults_flag(tmp_path):
    code, out = run(tmp_path, "simulate", {"world": {"mortality": 0.3}}, "--paper-defaults")
    assert code == 0
    (tmp_path / "base").mkdir()
    _, base = run(tmp_path / "base", "simulate", {})
    a = json.loads((out / "summary.json").read_text())["episode"]
    b = json.loads((base / "summary.json").read_text())["episode"]
    assert a == b
