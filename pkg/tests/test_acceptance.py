"""Acceptance criteria, each checked at its stated tolerance.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from conftest import acceptance_line, inversion_round_trip, lock_violations, toy_replay_schedule

from pandemic_econ import cli
from pandemic_econ.calib import CalibrationConfig, calibrate, fit_unemployment, stringency_changes
from pandemic_econ.config import load_config
from pandemic_econ.data import load_dataset
from pandemic_econ.env import EpisodeConfig, PandemicEnv, replay
from pandemic_econ.fixtures import generate_toy_data
from pandemic_econ.gradcheck import gradient_errors, random_instance
from pandemic_econ.sensitivity import CheckpointPolicy, ReplayPolicy, SensitivityGrid, run_grid
from pandemic_econ.train import evaluate, initial_policies, rollout
from pandemic_econ.welfare import alpha_hat_grid_search, estimate_alpha_hat

ROOT = Path(__file__).resolve().parents[1]


def test_1_conservation(toy, toy_welfare):
    params, initial = toy
    start = time.perf_counter()
    env = PandemicEnv(params, toy_welfare, initial, EpisodeConfig(), batch_size=1000)
    rng = np.random.default_rng(1)
    env.reset()
    worst = 0.0
    for _ in range(env.config.horizon):
        env.step(rng.integers(1, 11, size=(1000, params.num_regions)),
                 rng.integers(1, params.num_subsidy_levels + 1, size=1000))
        s = env.state
        total = s.susceptible + s.infected + s.recovered + s.vaccinated
        worst = max(worst, float(np.max(np.abs(total - params.population) / params.population)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 60
    acceptance_line("1", ok, f"max |S+I+R+V-n|/n = {worst:.2e} over 1000 episodes in {elapsed:.1f}s")
    assert worst <= 1e-9
    assert elapsed < 60


def test_2_normalization_endpoints(toy, toy_welfare):
    params, initial = toy
    horizon = EpisodeConfig().horizon
    errs = []
    for level, target in ((1, (0.0, 1.0)), (10, (1.0, 0.0))):
        schedule = np.full((horizon, params.num_regions), float(level))
        _, trace = replay(params, toy_welfare, initial, schedule)
        s = trace.summary()
        errs.append(np.max(np.abs(s["health_index"] - target[0])))
        errs.append(np.max(np.abs(s["econ_index"] - target[1])))
    worst = float(max(errs))
    acceptance_line("2", worst <= 1e-9, f"max endpoint error {worst:.2e} (tol 1e-9)")
    assert worst <= 1e-9


def test_3_gradient_checks():
    rng = np.random.default_rng(3)
    worst = {"log_prob": 0.0, "entropy": 0.0}
    for _ in range(100):
        err = gradient_errors(*random_instance(rng))
        worst = {k: max(worst[k], err[k]) for k in worst}
    ok = max(worst.values()) <= 1e-6
    acceptance_line("3", ok, f"max abs error log-prob {worst['log_prob']:.2e}, "
                             f"entropy {worst['entropy']:.2e} over 100 instances (tol 1e-6)")
    assert ok


def test_4_inversion_round_trip(toy):
    params, initial = toy
    beta = np.random.default_rng(4).uniform(0.05, 0.3, size=(200, params.num_regions))
    out = inversion_round_trip(params, initial, beta)
    ok = out["beta"] <= 1e-8 and out["deaths"] <= 1e-8
    acceptance_line("4", ok, f"beta rel error {out['beta']:.2e}, re-simulated deaths rel error "
                             f"{out['deaths']:.2e} over 200 days (tol 1e-8)")
    assert ok


def test_5_calibration_recovery(tmp_path):
    truth = generate_toy_data(541)
    from pandemic_econ.fixtures import write_toy_csvs
    write_toy_csvs(tmp_path, horizon=541)
    ds = load_dataset(tmp_path)
    params, _, report = calibrate(ds, CalibrationConfig(filter_length=360, unemployment_target="monthly"))
    slope_err = float(np.max(np.abs(params.beta_slope - truth.params.beta_slope)))
    intercept_err = float(np.max(np.abs(params.beta_intercept - truth.params.beta_intercept)))
    p = truth.params
    daily = fit_unemployment(truth.daily_unemployment[:400], stringency_changes(truth.stringency)[:400],
                             p.population, p.working_age_fraction, 3, p.filter_length)
    ok = (max(slope_err, intercept_err) <= 1e-9 and report.unemployment_loss <= 1e-8
          and daily.loss <= 1e-8)
    acceptance_line("5", ok, f"slope err {slope_err:.1e}, intercept err {intercept_err:.1e} (tol 1e-9); "
                             f"unemployment loss monthly {report.unemployment_loss:.1e}, "
                             f"daily {daily.loss:.1e} (tol 1e-8)")
    assert ok


def _frontier_point(x, alpha):
    """Point on E = (1 - H)^x where alpha H + (1 - alpha) E is stationary, if one exists."""
    if x == 1.0:
        if alpha != 0.5:
            return None
        return 0.5, 0.5  # every point of the line is stationary
    h = 1.0 - (alpha / ((1.0 - alpha) * x)) ** (1.0 / (x - 1.0))
    if not 0.0 < h < 1.0:
        return None
    return h, (1.0 - h) ** x


INFEASIBLE = {(0.5, 0.2), (1.0, 0.2), (1.0, 0.8), (2.0, 0.8), (4.0, 0.8)}
CASES = [pytest.param(x, a, marks=pytest.mark.xfail(
             strict=True, reason="no stationary interior point on this frontier for this alpha"))
         if (x, a) in INFEASIBLE else pytest.param(x, a)
         for x in (0.5, 1.0, 2.0, 4.0) for a in (0.2, 0.5, 0.8)]


@pytest.mark.parametrize("x, alpha", CASES)
def test_6_alpha_round_trip(x, alpha):
    point = _frontier_point(x, alpha)
    if point is None:
        acceptance_line("6", False, f"x={x}, alpha={alpha}: no interior point with this priority "
                                    "exists (strict xfail)")
        pytest.fail(f"no interior frontier point for x={x}, alpha={alpha}")
    h, e = point
    _, a_closed = estimate_alpha_hat(h, e)
    _, a_grid = alpha_hat_grid_search(h, e)
    err_closed, err_grid = abs(a_closed - alpha), abs(a_grid - a_closed)
    ok = err_closed <= 1e-6 and err_grid <= 1e-3
    acceptance_line("6", ok, f"x={x}, alpha={alpha}: closed-form err {err_closed:.1e} (tol 1e-6), "
                             f"grid agreement {err_grid:.1e} (tol 1e-3)")
    assert ok


@pytest.mark.slow
def test_7_training_efficacy(tmp_path, monkeypatch):
    start = time.perf_counter()
    monkeypatch.chdir(ROOT)
    cfg = load_config(ROOT / "configs" / "toy.yaml")
    paths = replace(cfg.paths, params=str(tmp_path / "calibrate" / "params.json"),
                    alpha=str(tmp_path / "alpha" / "alpha.json"),
                    checkpoint=str(tmp_path / "train" / "checkpoints"))
    cfg = replace(cfg, paths=paths)
    cli.cmd_calibrate(cfg, tmp_path / "calibrate")
    cli.cmd_alpha(cfg, tmp_path / "alpha")
    cli.cmd_train(cfg, tmp_path / "train")
    summary = cli.cmd_evaluate(cfg, tmp_path / "evaluate")
    elapsed = time.perf_counter() - start
    lift = summary["lift"]
    ok = lift["z"] >= 3.0 and elapsed <= 900 and len(summary["checkpoints"]) == 10
    acceptance_line("7", ok, f"lift {lift['lift']:.4f} = {lift['z']:.1f} SE over {cfg.evaluate.episodes} "
                             f"episodes x 10 seeds vs random; {elapsed:.0f}s (limit 900s)")
    assert lift["z"] >= 3.0
    assert elapsed <= 900


def test_8_constraint_soundness(toy, toy_welfare):
    params, initial = toy
    env = PandemicEnv(params, toy_welfare, initial, EpisodeConfig(), batch_size=1)
    counts = lock_violations(env, np.random.default_rng(8), 10_000)
    # the training rollout path, including the standing-action bookkeeping
    env4 = PandemicEnv(params, toy_welfare, initial, EpisodeConfig(), batch_size=4)
    agent, planner = initial_policies(env4)
    traj = rollout(agent, planner, env4, np.random.default_rng(9))
    a = traj.agent_actions
    for b in range(a.shape[1]):
        for i in range(a.shape[2]):
            days = np.flatnonzero(np.diff(a[:, b, i])) + 1
            counts["agent"] += int(np.sum(np.diff(days) < env.config.agent_lock_days))
    off_grid = np.flatnonzero(np.any(np.diff(traj.planner_actions, axis=0) != 0, axis=1)) + 1
    counts["planner"] += int(np.sum(off_grid % env.config.planner_period != 0))
    ok = not any(counts.values())
    acceptance_line("8", ok, f"violations over 10^4 random steps plus a training rollout: {counts}")
    assert ok


def test_9_sensitivity(toy, toy_welfare):
    params, initial = toy
    grid = SensitivityGrid()
    start = time.perf_counter()
    stringency, subsidy = toy_replay_schedule(params)
    real = run_grid(ReplayPolicy(stringency, subsidy), grid, params, toy_welfare, initial, workers=1)
    env = PandemicEnv(params, toy_welfare, initial, EpisodeConfig())
    agent, planner = initial_policies(env)
    rng = np.random.default_rng(9)
    agent = replace(agent, W=0.05 * rng.normal(size=agent.W.shape), b=rng.normal(size=agent.b.shape))
    ai = run_grid(CheckpointPolicy(agent, planner), grid, params, toy_welfare, initial, workers=1)
    elapsed = time.perf_counter() - start

    _, trace = replay(params, toy_welfare, initial, stringency, subsidy)
    traj = rollout(agent, planner, env, np.random.default_rng(0), greedy=True)
    greedy = evaluate(agent, planner, env, 1, np.random.default_rng(0), greedy=True)[0]
    i1, j1 = int(np.flatnonzero(grid.m_beta == 1.0)[0]), int(np.flatnonzero(grid.m_w == 1.0)[0])
    identity = (np.array_equal(real.welfare[i1, j1], trace.summary()["welfare"])
                and np.array_equal(ai.welfare[i1, j1], traj.welfare()[0])
                and np.array_equal(ai.welfare[i1, j1], greedy))
    fixed = {"replay": real.federal}
    for level in (1, 5, 10):
        sched = np.full_like(stringency, float(level))
        res = run_grid(ReplayPolicy(sched, subsidy), grid, params, toy_welfare, initial, workers=1)
        fixed[f"level {level}"] = res.federal
    monotone = all(np.all(np.diff(f, axis=1) <= 0) for f in fixed.values())
    ok = identity and monotone and elapsed <= 120
    acceptance_line("9", ok, f"identity cell bit-exact: {identity}; F_p nonincreasing in m_w for "
                             f"{sorted(fixed)}: {monotone}; two 7x7 grids in {elapsed:.1f}s (limit 120s)")
    assert identity
    assert monotone
    assert elapsed <= 120


REAL_DATA = os.environ.get("PANDEMIC_ECON_REAL_DATA")


@pytest.mark.skipif(not REAL_DATA, reason="informational; set PANDEMIC_ECON_REAL_DATA to a CSV directory")
def test_10_reference_reporting():
    ds = load_dataset(REAL_DATA)
    _, _, report = calibrate(ds, CalibrationConfig())
    r2 = report.r2
    line = (f"R2 train deaths {r2['train']['deaths']:.2f} / unemployment {r2['train']['unemployment']:.2f}, "
            f"test {r2['test']['deaths']:.2f} / {r2['test']['unemployment']:.2f} "
            "(reference 0.80/0.39 train, 0.54/0.35 test)")
    acceptance_line("10", True, "informational: " + line)
