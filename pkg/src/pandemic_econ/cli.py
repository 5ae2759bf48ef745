"""Command-line entry point.

Exit codes: 0 success, 2 invalid input or configuration, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import calib, sensitivity as sens, train as tr
from .config import ConfigError, RunConfig, load_config, pin_published_defaults
from .data import DataError, load_dataset, payments_to_inflow
from .env import (EpisodeConfig, InitialConditions, PandemicEnv, episode_summary,
                  read_trajectory_schedule, replay, write_trajectory)
from .fixtures import toy_initial, toy_payments, toy_recorded_stringency, toy_world
from .policy import load_checkpoint, save_checkpoint
from .sim import WorldParams, subsidy_inflow
from .welfare import (FrontierBoundaryError, WelfareConfig, alpha_hat_grid_search, compute_normalization,
                      estimate_alpha_hat)

log = logging.getLogger("pandemic_econ")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def load_world(cfg: RunConfig) -> tuple[WorldParams, InitialConditions]:
    """Calibrated world from ``paths.params``, or the bundled toy world; then apply overrides."""
    if cfg.paths.params:
        params, initial, _ = calib.read_calibration(cfg.paths.params)
    else:
        params = toy_world()
        initial = toy_initial(params)
    if cfg.world:
        data = params.to_dict()
        data.update(cfg.world)
        try:
            params = WorldParams.from_dict(data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid world overrides: {exc}") from exc
    return params, initial


def build_welfare(cfg: RunConfig, params: WorldParams) -> WelfareConfig:
    n = params.num_regions
    section = cfg.welfare
    if section.alpha_source == "calibrated":
        if not cfg.paths.alpha:
            raise ConfigError("welfare.alpha_source is 'calibrated' but paths.alpha is not set")
        payload = json.loads(Path(cfg.paths.alpha).read_text())
        alpha = payload["alpha_hat"]
        if len(alpha) != n + 1 or any(a is None for a in alpha):
            raise ConfigError(f"{cfg.paths.alpha}: need a finite alpha_hat for each of the {n + 1} actors")
    else:
        alpha = section.alpha
    scale = np.concatenate([np.broadcast_to(np.asarray(section.agent_priority_scale, dtype=float), (n,)),
                            [section.planner_priority_scale]])
    return WelfareConfig.for_world(params, alpha=alpha, crra_shape=section.crra_shape,
                                   borrowing_cost=section.borrowing_cost, health_priority_scale=scale)


def with_bounds(welfare: WelfareConfig, params, initial, episode: EpisodeConfig, window=None,
                horizon=None) -> WelfareConfig:
    bounds = compute_normalization(params, initial.state(params), horizon or episode.horizon, welfare,
                                   window=window)
    return replace(welfare, bounds=bounds)


@dataclass
class EnvFactory:
    """Picklable environment builder for worker processes."""

    params: WorldParams
    welfare: WelfareConfig
    initial: InitialConditions
    episode: EpisodeConfig

    def __call__(self, batch_size: int) -> PandemicEnv:
        return PandemicEnv(self.params, self.welfare, self.initial, self.episode, batch_size=batch_size)


def recorded_schedule(cfg: RunConfig, params: WorldParams, horizon: int):
    """Stringency and subsidy inflow (horizon, N) driving days 1..horizon of the episode."""
    if cfg.paths.replay:
        stringency, subsidy = read_trajectory_schedule(cfg.paths.replay, params)
        source = cfg.paths.replay
    elif cfg.paths.data_dir:
        ds = load_dataset(cfg.paths.data_dir)
        if ds.start_date != cfg.episode.start_date:
            raise ConfigError(f"data starts on {ds.start_date} but the episode starts on {cfg.episode.start_date}")
        if list(ds.regions) != list(params.region_names):
            raise ConfigError("data regions do not match the world's regions")
        inflow = calib.recorded_inflow(ds, cfg.calibration.payment_spread_days)
        stringency, subsidy = ds.stringency[1:], inflow[1:]
        source = cfg.paths.data_dir
    else:
        stringency = toy_recorded_stringency(horizon + 1, params.num_regions)[1:]
        subsidy = payments_to_inflow(toy_payments(), cfg.episode.start_date, horizon + 1, params.population)[1:]
        source = "toy"
    if stringency.shape[0] < horizon:
        raise ValueError(f"replay from {source} covers {stringency.shape[0]} days but {horizon} are required")
    return stringency[:horizon], subsidy[:horizon]


def _checkpoint_files(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("seed_*.json"), key=lambda f: int(f.stem.split("_")[1]))
        if not files:
            raise ConfigError(f"{p}: no seed_*.json checkpoints found")
        return files
    if not p.exists():
        raise ConfigError(f"checkpoint {p} not found")
    return [p]


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def cmd_calibrate(cfg: RunConfig, out: Path) -> dict:
    if not cfg.paths.data_dir:
        raise ConfigError("calibrate needs a data directory (paths.data_dir or --data)")
    ds = load_dataset(cfg.paths.data_dir)
    constants = {k: v for k, v in cfg.world.items() if k not in calib.FITTED_FIELDS}
    params, initial, report = calib.calibrate(ds, cfg.calibration, constants)
    calib.write_calibration(out, params, initial, report, ds.start_date)
    log.info("calibrated %d regions; delay %d days; R2 %s", len(ds.regions), report.delay, report.r2)
    return report.to_dict()


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    params, initial = load_world(cfg)
    episode = cfg.episode
    welfare = with_bounds(build_welfare(cfg, params), params, initial, episode)
    horizon = episode.horizon
    section = cfg.simulate
    if section.policy == "checkpoint":
        if not cfg.paths.checkpoint:
            raise ConfigError("simulate.policy 'checkpoint' needs paths.checkpoint")
        agent, planner, _ = load_checkpoint(_checkpoint_files(cfg.paths.checkpoint)[0])
        env = PandemicEnv(params, welfare, initial, episode, batch_size=1, record=True)
        tr.rollout(agent, planner, env, np.random.default_rng(cfg.seed), greedy=section.greedy)
        result, _ = env.episode_record(0)
        stringency, subsidy = result.stringency, result.subsidy
    elif section.policy == "replay":
        stringency, subsidy = recorded_schedule(cfg, params, horizon)
    else:
        stringency = np.full((horizon, params.num_regions), float(section.stringency_level))
        if not 1 <= section.stringency_level <= 10:
            raise ConfigError("simulate.stringency_level must lie in 1..10")
        subsidy = np.broadcast_to(subsidy_inflow(section.subsidy_level, params), stringency.shape)
    result, trace = replay(params, welfare, initial, stringency, subsidy)
    extra = {"metadata": {"command": "simulate", "policy": section.policy, "seed": cfg.seed}}
    return write_trajectory(out, result, trace, params, episode, extra)


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    params, initial = load_world(cfg)
    welfare = with_bounds(build_welfare(cfg, params), params, initial, cfg.episode)
    seeds = [cfg.seed + s for s in cfg.train.seeds]
    tcfg = replace(cfg.train, seeds=seeds)
    results = tr.train(tcfg, EnvFactory(params, welfare, initial, cfg.episode))
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    summary = {"seeds": seeds, "final_mean_welfare": {}, "bounds": welfare.bounds.to_dict()}
    for res in results:
        save_checkpoint(ckpt_dir / f"seed_{res.seed}.json", res.agent, res.planner,
                        metadata={"seed": res.seed, "iterations": tcfg.iterations})
        final = res.curve["mean_welfare"].iloc[-1] if len(res.curve) else None
        summary["final_mean_welfare"][str(res.seed)] = None if final is None else float(final)
    curves = [r.curve for r in results if len(r.curve)]
    if curves:
        pd.concat(curves, ignore_index=True).to_csv(out / "learning_curves.csv", index=False)
    _write_json(out / "train_summary.json", summary)
    return summary


def cmd_evaluate(cfg: RunConfig, out: Path) -> dict:
    params, initial = load_world(cfg)
    welfare = with_bounds(build_welfare(cfg, params), params, initial, cfg.episode)
    if not cfg.paths.checkpoint:
        raise ConfigError("evaluate needs paths.checkpoint (a checkpoint file or a directory of them)")
    files = _checkpoint_files(cfg.paths.checkpoint)
    out.mkdir(parents=True, exist_ok=True)
    episodes = cfg.evaluate.episodes
    env = PandemicEnv(params, welfare, initial, cfg.episode, batch_size=min(episodes, 10))
    names = list(params.region_names) + ["federal"]
    rows, trained = [], []
    for k, f in enumerate(files):
        agent, planner, _ = load_checkpoint(f)
        w = tr.evaluate(agent, planner, env, episodes, np.random.default_rng([cfg.seed, k]),
                        greedy=cfg.evaluate.greedy)
        trained.append(w)
        rows += [("trained", f.name, e, names[a], float(w[e, a])) for e in range(w.shape[0])
                 for a in range(len(names))]
    agent0, planner0 = tr.initial_policies(env)
    rand = tr.evaluate(agent0, planner0, env, episodes, np.random.default_rng([cfg.seed, len(files) + 1]))
    rows += [("random", "uniform", e, names[a], float(rand[e, a])) for e in range(rand.shape[0])
             for a in range(len(names))]
    pd.DataFrame(rows, columns=["policy", "checkpoint", "episode", "actor", "welfare"]).to_csv(
        out / "evaluation.csv", index=False, float_format="%.17g")
    all_trained = np.concatenate(trained)
    summary = {
        "actors": names,
        "trained_welfare": all_trained.mean(axis=0).tolist(),
        "random_welfare": rand.mean(axis=0).tolist(),
        "checkpoints": [f.name for f in files],
        "greedy": cfg.evaluate.greedy,
        "lift": tr.welfare_lift(trained, rand) if (all_trained.shape[0] > 1 and rand.shape[0] > 1) else None,
    }
    _write_json(out / "evaluation.json", summary)
    return summary


def read_outcomes(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    df = pd.read_csv(path, float_precision="round_trip")
    missing = {"actor", "health_index", "econ_index"} - set(df.columns)
    if missing:
        raise DataError([f"{path}: missing column(s) {', '.join(sorted(missing))}"])
    return df["actor"].astype(str).tolist(), df["health_index"].to_numpy(float), df["econ_index"].to_numpy(float)


def cmd_alpha(cfg: RunConfig, out: Path) -> dict:
    window = None
    if cfg.paths.outcomes:
        actors, h, e = read_outcomes(cfg.paths.outcomes)
    else:
        params, initial = load_world(cfg)
        start = cfg.episode.day_of(cfg.alpha.start_date) - 1
        end = cfg.episode.day_of(cfg.alpha.end_date) - 1
        if not 0 <= start <= end:
            raise ConfigError("alpha window must start on or after the first simulated day")
        horizon = end + 1
        window = (start, end)
        # the indices do not depend on alpha, and alpha is what this command estimates
        explicit = replace(cfg, welfare=replace(cfg.welfare, alpha_source="explicit"))
        welfare = with_bounds(build_welfare(explicit, params), params, initial, cfg.episode,
                              window=window, horizon=horizon)
        stringency, subsidy = recorded_schedule(cfg, params, horizon)
        _, trace = replay(params, welfare, initial, stringency, subsidy)
        s = trace.summary(window)
        actors = list(params.region_names) + ["federal"]
        h, e = s["health_index"], s["econ_index"]
    alpha_hat, shape, grid, errors = [], [], [], {}
    for name, hs, es in zip(actors, h, e):
        try:
            x, a = estimate_alpha_hat(float(hs), float(es))
            _, g = alpha_hat_grid_search(float(hs), float(es))
        except FrontierBoundaryError as exc:
            errors[name] = str(exc)
            x = a = g = None
        alpha_hat.append(a)
        shape.append(x)
        grid.append(g)
    if errors:
        log.warning("alpha undefined for %d actor(s): %s", len(errors), sorted(errors))
    payload = {"actors": actors, "alpha_hat": alpha_hat, "frontier_shape": shape,
               "grid_alpha_hat": grid, "health_index": np.asarray(h).tolist(),
               "econ_index": np.asarray(e).tolist(), "window": window, "errors": errors}
    _write_json(out / "alpha.json", payload)
    return payload


def cmd_sensitivity(cfg: RunConfig, out: Path) -> dict:
    params, initial = load_world(cfg)
    welfare = with_bounds(build_welfare(cfg, params), params, initial, cfg.episode)
    grid = sens.SensitivityGrid(cfg.sensitivity.m_beta, cfg.sensitivity.m_w)
    results = {}
    for kind in cfg.sensitivity.policies:
        if kind == "replay":
            policy = sens.ReplayPolicy(*recorded_schedule(cfg, params, cfg.episode.horizon))
        else:
            if not cfg.paths.checkpoint:
                raise ConfigError("sensitivity policy 'checkpoint' needs paths.checkpoint")
            agent, planner, _ = load_checkpoint(_checkpoint_files(cfg.paths.checkpoint)[0])
            policy = sens.CheckpointPolicy(agent, planner, greedy=cfg.sensitivity.greedy,
                                           seeds=tuple(cfg.seed + s for s in cfg.sensitivity.sample_seeds))
        results[kind] = sens.run_grid(policy, grid, params, welfare, initial, cfg.episode)
        sens.write_grid(out / kind, results[kind])
    payload = {k: {"federal": v.federal.tolist()} for k, v in results.items()}
    if {"replay", "checkpoint"} <= set(results):
        sens.write_grid(out / "checkpoint", results["checkpoint"], baseline=results["replay"])
        r = sens.ratio(results["checkpoint"], results["replay"])
        _write_json(out / "sensitivity_ratio.json", {
            "m_beta": grid.m_beta.tolist(), "m_w": grid.m_w.tolist(),
            "actors": results["replay"].actors, "federal": r[..., -1].tolist(),
            "per_actor": {a: r[..., i].tolist() for i, a in enumerate(results["replay"].actors)}})
    return payload


COMMANDS = {
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "alpha": cmd_alpha,
    "sensitivity": cmd_sensitivity,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pandemic-econ", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("-v", "--verbose", action="store_true")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", default=f"runs/{name}", help="output directory")
        p.add_argument("--paper-defaults", action="store_true",
                       help="pin every published constant, overriding the config")
        if name == "calibrate":
            p.add_argument("--data", help="directory holding the calibration CSVs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.paper_defaults:
            cfg = pin_published_defaults(cfg)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if getattr(args, "data", None):
            cfg = replace(cfg, paths=replace(cfg.paths, data_dir=args.data))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
