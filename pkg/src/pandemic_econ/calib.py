"""Fitting the simulator to observed deaths, unemployment and stringency.

Index convention: ``beta[t]`` is the transmission rate that carries the
epidemic from day ``t - 1`` to day ``t``. The simulator computes that rate
from the stringency in force ``d`` days before day ``t``, so regressions pair
``beta[t]`` with ``stringency[t - d]``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lfilter
from scipy.special import expit

from .data import CalibrationDataset, DataError, payments_to_inflow
from .env import InitialConditions
from .sim import WorldParams, simulate_schedule, softplus, vaccination_supply

log = logging.getLogger(__name__)

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class SIRInversion:
    """Compartments implied by cumulative deaths, each (T, N); NaN where undefined."""

    susceptible: np.ndarray
    infected: np.ndarray
    recovered: np.ndarray
    vaccinated: np.ndarray
    beta: np.ndarray


def invert_sir(deaths, population, mortality: float, recovery: float, vaccine_supply=None,
               dates: Sequence[str] | None = None, initial_vaccinated=None) -> SIRInversion:
    """Solve the SIR recursions backwards from cumulative deaths.

    ``R = D / mu`` and ``I[t] = (R[t+1] - R[t]) / nu``, so the last day's
    infections (and the rates touching it) cannot be recovered and are NaN.
    ``vaccine_supply[t]`` is the dose supply for the step into day ``t``;
    doses are truncated to the remaining susceptibles exactly as in the
    simulator, which makes ``S + I + R + V = n`` hold on every defined day.
    ``beta[t]`` is NaN at ``t = 0`` and wherever ``S[t-1] * I[t-1] = 0``.
    """
    d = np.asarray(deaths, dtype=float)
    if d.ndim == 1:
        d = d[:, None]
    n = np.broadcast_to(np.asarray(population, dtype=float), d.shape[1:])
    if mortality <= 0 or recovery <= 0:
        raise ValueError("mortality and recovery rates must be positive")
    labels = list(dates) if dates is not None else [str(t) for t in range(d.shape[0])]
    drops = np.nonzero(np.diff(d, axis=0) < 0)[0]
    if drops.size:
        bad = sorted({labels[t + 1] for t in drops})
        raise DataError([f"cumulative deaths decrease on {bad[:10]}"])
    supply = np.zeros_like(d) if vaccine_supply is None else np.broadcast_to(vaccine_supply, d.shape)

    r = d / mortality
    i = np.full_like(d, np.nan)
    i[:-1] = (r[1:] - r[:-1]) / recovery
    s = np.full_like(d, np.nan)
    v = np.full_like(d, np.nan)
    v[0] = 0.0 if initial_vaccinated is None else initial_vaccinated
    s[0] = n - i[0] - r[0] - v[0]
    new_infections = np.full_like(d, np.nan)
    new_infections[1:] = i[1:] - i[:-1] + recovery * i[:-1]
    for t in range(1, d.shape[0]):
        room = s[t - 1] - np.nan_to_num(new_infections[t], nan=0.0)
        applied = np.clip(supply[t], 0.0, np.maximum(room, 0.0))
        s[t] = s[t - 1] - new_infections[t] - applied
        v[t] = v[t - 1] + applied
    bad_rows = np.nonzero((s < -1e-9 * n) | (new_infections < -1e-9 * n))[0]
    if bad_rows.size:
        bad = sorted({labels[t] for t in bad_rows})
        raise DataError([f"implied compartments are negative on {bad[:10]}"])

    beta = np.full_like(d, np.nan)
    exposure = s[:-1] * i[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = new_infections[1:] * n / exposure
    beta[1:] = np.where(exposure > 0, rate, np.nan)
    return SIRInversion(s, i, r, v, beta)


def lagged(series: np.ndarray, delay: int) -> np.ndarray:
    """``out[t] = series[t - delay]``, NaN where the lag reaches before the start."""
    series = np.asarray(series, dtype=float)
    out = np.full_like(series, np.nan)
    if delay < series.shape[0]:
        out[delay:] = series[: series.shape[0] - delay]
    return out


def pooled_correlation(x: np.ndarray, y: np.ndarray, min_points: int = 3) -> float:
    ok = np.isfinite(x) & np.isfinite(y)
    if ok.sum() < min_points:
        return np.nan
    xs, ys = x[ok], y[ok]
    if np.ptp(xs) == 0 or np.ptp(ys) == 0:
        return np.nan
    return float(np.corrcoef(xs, ys)[0, 1])


def select_delay(stringency, beta, candidates: Sequence[int] = range(61)) -> tuple[int, np.ndarray]:
    """Delay with the strongest pooled |correlation| between lagged stringency and beta.

    Returns the chosen delay and the correlation for every candidate. Ties
    go to the smallest delay.
    """
    stringency = np.asarray(stringency, dtype=float)
    beta = np.asarray(beta, dtype=float)
    corr = np.array([pooled_correlation(lagged(stringency, d).ravel(), beta.ravel())
                     for d in candidates])
    if np.all(np.isnan(corr)):
        raise ValueError("insufficient overlap between stringency and transmission series")
    strength = np.where(np.isnan(corr), -np.inf, np.abs(corr))
    best = int(np.flatnonzero(strength == strength.max())[0])
    return int(list(candidates)[best]), corr


@dataclass
class TransmissionFit:
    slope: np.ndarray
    intercept: np.ndarray


def _transmission_moments(beta, delayed):
    beta = np.asarray(beta, dtype=float)
    delayed = np.asarray(delayed, dtype=float)
    if beta.ndim == 1:
        beta, delayed = beta[:, None], delayed[:, None]
    ok = np.isfinite(beta) & np.isfinite(delayed)
    x = np.where(ok, delayed, 0.0)
    y = np.where(ok, beta, 0.0)
    w = ok.astype(float)
    a = np.stack([np.stack([(x * x).sum(0), x.sum(0)], -1),
                  np.stack([x.sum(0), w.sum(0)], -1)], -2)  # (N, 2, 2)
    c = np.stack([(x * y).sum(0), y.sum(0)], -1)           # (N, 2)
    return a, c


def fit_transmission(beta, delayed_stringency, ridge: float = 0.0) -> TransmissionFit:
    """Per-region least squares for ``beta = slope * stringency + intercept``.

    The penalty ``ridge * sum_i |theta_i - mean(theta)|^2`` shrinks regions
    toward their common mean. The stationarity conditions are linear, so the
    fixed point is solved directly: ``(A_i + ridge I) theta_i = c_i + ridge m``
    with ``m`` the mean of the ``theta_i``.
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    a, c = _transmission_moments(beta, delayed_stringency)
    n = a.shape[0]
    eye = np.eye(2)
    if ridge == 0:
        bad = np.flatnonzero(np.linalg.cond(a) > 1e12)
        if bad.size:
            raise np.linalg.LinAlgError(
                f"singular transmission design for regions {bad.tolist()}: need at least two "
                "distinct delayed stringency levels per region when ridge is zero")
        theta = np.linalg.solve(a, c[..., None])[..., 0]
        return TransmissionFit(theta[:, 0], theta[:, 1])
    m_inv = np.linalg.inv(a + ridge * eye)
    # (I - ridge * mean M_i) equals mean(M_i A_i); the latter avoids cancellation for large ridge.
    lhs = np.mean(m_inv @ a, axis=0)
    rhs = np.mean(m_inv @ c[..., None], axis=0)[:, 0]
    if n == 1:
        mean = np.linalg.solve(a[0], c[0])
    else:
        mean = np.linalg.solve(lhs, rhs)
    theta = (m_inv @ (c + ridge * mean)[..., None])[..., 0]
    return TransmissionFit(theta[:, 0], theta[:, 1])


def fit_transmission_iterative(beta, delayed_stringency, ridge: float, tol: float = 1e-10,
                               max_iter: int = 100000) -> TransmissionFit:
    """Alternating per-region solves and mean updates; slow reference for :func:`fit_transmission`."""
    a, c = _transmission_moments(beta, delayed_stringency)
    eye = np.eye(2)
    theta = np.linalg.lstsq(a.sum(0), c.sum(0), rcond=None)[0] * np.ones((a.shape[0], 2))
    for _ in range(max_iter):
        mean = theta.mean(axis=0)
        new = np.linalg.solve(a + ridge * eye, (c + ridge * mean)[..., None])[..., 0]
        if np.max(np.abs(new - theta)) < tol:
            theta = new
            break
        theta = new
    return TransmissionFit(theta[:, 0], theta[:, 1])


def filter_responses(delta: np.ndarray, decays, length: int) -> np.ndarray:
    """``out[t, i, k] = sum_{j<=L} exp(-j / decay_k) * delta[t - j, i]``, shape (T, N, K)."""
    lags = np.arange(length + 1, dtype=float)
    return np.stack([lfilter(np.exp(-lags / lam), [1.0], delta, axis=0) for lam in decays], axis=-1)


def _filter_derivatives(delta: np.ndarray, decays, length: int) -> np.ndarray:
    """Derivative of :func:`filter_responses` with respect to each log-decay."""
    lags = np.arange(length + 1, dtype=float)
    return np.stack([lfilter(np.exp(-lags / lam) * lags / lam, [1.0], delta, axis=0) for lam in decays],
                    axis=-1)


@dataclass
class UnemploymentFit:
    decays: np.ndarray
    weights: np.ndarray
    baseline: np.ndarray
    loss: float
    converged: bool
    sweeps: int
    history: list[float] = field(default_factory=list)


class _UnemploymentProblem:
    """Rate-space least squares; region parameters are per-worker weights and baseline rate.

    ``groups`` assigns each day to an observation period; predictions are
    averaged within a period before being compared with the observed mean.
    """

    def __init__(self, rate, delta, workers, length, ridge, groups=None):
        self.delta = delta
        self.workers = workers
        self.length = length
        self.ridge = ridge
        self.T, self.N = rate.shape
        if groups is None:
            self.agg = np.eye(self.T)
        else:
            groups = np.asarray(groups)
            labels = list(dict.fromkeys(groups.tolist()))
            member = (groups[None, :] == np.array(labels, dtype=groups.dtype)[:, None]).astype(float)
            self.agg = member / member.sum(axis=1, keepdims=True)
        self.obs = self.agg @ rate
        self.G = self.obs.shape[0]
        self.scale = 1.0 / np.sqrt(self.obs.size)

    def unpack(self, z):
        k = (z.size // self.N) - 1
        body = z.reshape(self.N, k + 1)
        return body[:, :k], body[:, k]

    def predict(self, weights, base, responses):
        """Daily predicted rates (T, N) and the softplus argument."""
        x = self.workers[None, :] * np.einsum("tik,ik->ti", responses, weights)
        return softplus(x) / self.workers[None, :] + base[None, :], x

    def residuals(self, z, responses):
        w, base = self.unpack(z)
        pred, _ = self.predict(w, base, responses)
        data = ((self.agg @ pred - self.obs) * self.scale).ravel()
        pen = np.sqrt(self.ridge) * (w - w.mean(axis=0)).ravel()
        return np.concatenate([data, pen])

    def _region_block(self, daily):
        """Place per-region derivatives (G, N, P) on the block diagonal of a (G*N, N*P) matrix."""
        g, n, q = daily.shape
        block = np.zeros((g, n, n, q))
        idx = np.arange(n)
        block[:, idx, idx, :] = daily
        return block.reshape(g * n, n * q)

    def jacobian(self, z, responses):
        w, base = self.unpack(z)
        k = w.shape[1]
        _, x = self.predict(w, base, responses)
        daily = np.concatenate([expit(x)[..., None] * responses, np.ones((self.T, self.N, 1))], axis=-1)
        data = self._region_block(np.einsum("gt,tip->gip", self.agg, daily) * self.scale)
        centering = np.eye(self.N) - 1.0 / self.N
        select = np.hstack([np.eye(k), np.zeros((k, 1))])
        pen = np.sqrt(self.ridge) * np.kron(centering, select)
        return np.vstack([data, pen])

    def data_loss(self, z, responses):
        w, base = self.unpack(z)
        pred, _ = self.predict(w, base, responses)
        return float(np.mean((self.agg @ pred - self.obs) ** 2))

    def objective(self, z, responses):
        return float(np.sum(self.residuals(z, responses) ** 2))

    def linear_start(self, responses):
        k = responses.shape[-1]
        z = np.zeros((self.N, k + 1))
        for i in range(self.N):
            design = self.agg @ np.column_stack([responses[:, i, :], np.ones(self.T)])
            z[i] = np.linalg.lstsq(design, self.obs[:, i], rcond=None)[0]
        return z.ravel()

    def solve_linear_part(self, decays, z0=None):
        responses = filter_responses(self.delta, decays, self.length)
        z0 = self.linear_start(responses) if z0 is None else z0
        sol = least_squares(self.residuals, z0, jac=self.jacobian, args=(responses,),
                            method="trf", x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                            max_nfev=200)
        return sol.x, self.objective(sol.x, responses)


def golden_section(f, lo: float, hi: float, tol: float = 1e-4, max_iter: int = 200):
    """Minimize a unimodal scalar function on ``[lo, hi]``."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def fit_unemployment(unemployment, delta_stringency, population, working_age_fraction: float = 0.6,
                     num_filters: int = 3, filter_length: int = 120, ridge: float = 0.0,
                     initial_decays=None, decay_bounds: tuple[float, float] | None = None,
                     max_sweeps: int = 20, tol: float = 1e-10, groups=None,
                     restart_scales=(1.0, 2.0, 0.5)) -> UnemploymentFit:
    """Fit filter decays, per-region weights and baselines to daily unemployment (persons).

    Parameters are estimated in rate units (per working-age resident) so
    regions of different size are weighted equally. Each sweep runs a
    golden-section search over every log-decay with the linear parameters
    re-solved inside, then a joint trust-region step over all parameters
    polishes the result. The fit has converged once a sweep lowers the
    objective by less than ``tol``. ``loss`` is the mean squared rate
    error, excluding the ridge penalty. With ``groups`` (one label per day)
    the error is taken between period means, e.g. calendar months.

    The objective is not convex in the decays, so the search is restarted
    from ``initial_decays`` times each of ``restart_scales`` and the lowest
    objective wins. Restarts stop early once the fit is exact.
    """
    u = np.asarray(unemployment, dtype=float)
    delta = np.asarray(delta_stringency, dtype=float)
    workers = working_age_fraction * np.asarray(population, dtype=float)
    rate = u / workers[None, :]
    prob = _UnemploymentProblem(rate, delta, workers, filter_length, ridge, groups)
    if initial_decays is None:
        initial_decays = [7.0, 30.0, 120.0] if num_filters == 3 else np.geomspace(7.0, 120.0, num_filters)
    decays = np.asarray(initial_decays, dtype=float).copy()
    if decays.size != num_filters:
        raise ValueError("initial_decays must have num_filters entries")
    lo, hi = decay_bounds if decay_bounds is not None else (1.0, 4.0 * filter_length)
    log_lo, log_hi = np.log(lo), np.log(hi)

    best_run = None
    for scale in restart_scales:
        start = np.clip(decays * scale, lo, hi)
        run = _sweep(prob, start, log_lo, log_hi, max_sweeps, tol)
        if best_run is None or run[2] < best_run[2]:
            best_run = run
        if best_run[2] < 1e-24:
            break
    decays, z, best, converged, sweeps, history = best_run
    if not converged:
        log.warning("unemployment fit stopped after %d sweeps; objective %.3g", sweeps, best)
    order = np.argsort(decays)
    weights, base = prob.unpack(z)
    responses = filter_responses(delta, decays, filter_length)
    loss = prob.data_loss(z, responses)
    weights = weights[:, order] * workers[:, None]
    offset = base * workers
    return UnemploymentFit(decays=decays[order], weights=weights, baseline=offset, loss=loss,
                           converged=converged, sweeps=sweeps, history=history)


def _sweep(prob: _UnemploymentProblem, decays, log_lo, log_hi, max_sweeps, tol):
    decays = decays.copy()
    num_filters = decays.size
    z, best = prob.solve_linear_part(decays)
    history = [best]
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        start = best
        for k in range(num_filters):
            def trial(log_lam, k=k):
                cand = decays.copy()
                cand[k] = np.exp(log_lam)
                return prob.solve_linear_part(cand, z)[1]

            log_lam, value = golden_section(trial, log_lo, log_hi, tol=1e-4)
            if value < best:
                decays[k] = np.exp(log_lam)
                z, best = prob.solve_linear_part(decays, z)
        decays, z, best = _joint_refine(prob, decays, z, best, log_lo, log_hi)
        history.append(best)
        if start - best < tol:
            converged = True
            break
    return decays, z, best, converged, sweeps, history


def _joint_refine(prob: _UnemploymentProblem, decays, z, best, log_lo, log_hi):
    k = decays.size

    def split(p):
        return np.exp(p[:k]), p[k:]

    def resid(p):
        lam, zz = split(p)
        return prob.residuals(zz, filter_responses(prob.delta, lam, prob.length))

    def jac(p):
        lam, zz = split(p)
        responses = filter_responses(prob.delta, lam, prob.length)
        base = prob.jacobian(zz, responses)
        w, _ = prob.unpack(zz)
        _, x = prob.predict(w, np.zeros(prob.N), responses)
        deriv = _filter_derivatives(prob.delta, lam, prob.length)  # d response / d log lam
        daily = expit(x)[..., None] * w[None, :, :] * deriv
        dl = np.zeros((base.shape[0], k))
        dl[: prob.G * prob.N] = (np.einsum("gt,tik->gik", prob.agg, daily) * prob.scale).reshape(-1, k)
        return np.hstack([dl, base])

    p0 = np.concatenate([np.log(decays), z])
    lower = np.concatenate([np.full(k, log_lo), np.full(z.size, -np.inf)])
    upper = np.concatenate([np.full(k, log_hi), np.full(z.size, np.inf)])
    p0[:k] = np.clip(p0[:k], log_lo + 1e-12, log_hi - 1e-12)
    sol = least_squares(resid, p0, jac=jac, bounds=(lower, upper), method="trf", x_scale="jac",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=500)
    value = float(np.sum(sol.fun ** 2))
    if value <= best:
        lam, zz = split(sol.x)
        return lam, zz, value
    return decays, z, best


def r_squared(observed, predicted) -> float:
    """Pooled coefficient of determination; NaN entries are ignored."""
    y = np.asarray(observed, dtype=float).ravel()
    f = np.asarray(predicted, dtype=float).ravel()
    ok = np.isfinite(y) & np.isfinite(f)
    y, f = y[ok], f[ok]
    ss_tot = np.sum((y - y.mean()) ** 2)
    ss_res = np.sum((y - f) ** 2)
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else -np.inf
    return float(1.0 - ss_res / ss_tot)


@dataclass
class CalibrationConfig:
    split_date: str = "2020-11-30"
    validation_days: int = 31
    delay_candidates: tuple[int, int] = (0, 60)
    transmission_ridges: list[float] = field(default_factory=lambda: [0.0])
    unemployment_ridges: list[float] = field(default_factory=lambda: [0.0])
    num_filters: int = 3
    filter_length: int = 120
    initial_decays: list[float] | None = None
    max_sweeps: int = 20
    payment_spread_days: int = 90
    unemployment_target: str = "daily"  # daily | monthly

    def __post_init__(self):
        if self.unemployment_target not in ("daily", "monthly"):
            raise ValueError("unemployment_target must be 'daily' or 'monthly'")
        lo, hi = self.delay_candidates
        if not 0 <= lo <= hi:
            raise ValueError("delay_candidates must satisfy 0 <= lo <= hi")
        if any(r < 0 for r in self.transmission_ridges + self.unemployment_ridges):
            raise ValueError("ridge strengths must be non-negative")
        if not self.transmission_ridges or not self.unemployment_ridges:
            raise ValueError("need at least one ridge candidate per fit")


@dataclass
class FitReport:
    delay: int
    beta_slope: list[float]
    beta_intercept: list[float]
    filter_decays: list[float]
    unemployment_weights: list[list[float]]
    baseline_unemployment: list[float]
    transmission_ridge: float
    unemployment_ridge: float
    unemployment_loss: float
    unemployment_converged: bool
    r2: dict[str, dict[str, float]]
    split_date: str
    delay_correlations: list[float]

    def to_dict(self):
        return asdict(self)


def recorded_inflow(ds: CalibrationDataset, spread_days: int = 90) -> np.ndarray:
    return payments_to_inflow(ds.payments, ds.start_date, ds.num_days, ds.population, spread_days)


def stringency_changes(stringency: np.ndarray) -> np.ndarray:
    delta = np.zeros_like(stringency, dtype=float)
    delta[1:] = np.diff(stringency, axis=0)
    return delta


def replay_dataset(params: WorldParams, initial: InitialConditions, ds: CalibrationDataset,
                   spread_days: int = 90):
    """Simulate the data period under the recorded stringency and payments.

    Day 0 is the initial condition, so the run covers days 1..T-1.
    """
    inflow = recorded_inflow(ds, spread_days)
    return simulate_schedule(params, initial.state(params), ds.stringency[1:], inflow[1:])


def _monthly_means(values: np.ndarray, dates: Sequence[str]):
    months = np.array([d[:7] for d in dates])
    keys = sorted(set(months))
    return keys, np.stack([values[months == k].mean(axis=0) for k in keys])


def evaluate_fit(ds: CalibrationDataset, params: WorldParams, initial: InitialConditions,
                 split_date: str, spread_days: int = 90) -> dict[str, dict[str, float]]:
    """Population-normalized R² of daily deaths and monthly unemployment, train vs test.

    Deaths are compared as daily new deaths per resident; unemployment as
    monthly mean rates, the resolution at which it is reported. Months up to
    and including the split month form the training window.
    """
    split = ds.day_index(split_date)
    if not 0 < split < ds.num_days - 1:
        raise ValueError(f"split date {split_date} must fall inside the data range")
    run = replay_dataset(params, initial, ds, spread_days)
    n = ds.population
    sim_daily_deaths = run.new_deaths / n
    obs_daily_deaths = np.diff(ds.deaths, axis=0) / n
    days = np.arange(1, ds.num_days)
    train_d, test_d = days <= split, days > split

    workers = params.working_age_fraction * n
    sim_rate = np.vstack([initial.state(params).unemployment, run.unemployment]) / workers
    months, sim_month = _monthly_means(sim_rate, ds.dates)
    _, obs_month = _monthly_means(ds.unemployment_rate, ds.dates)
    split_month = split_date[:7]
    train_m = np.array([m <= split_month for m in months])

    def score(obs, sim, mask):
        return r_squared(obs[mask], sim[mask]) if mask.any() else float("nan")

    return {
        "train": {"deaths": score(obs_daily_deaths, sim_daily_deaths, train_d),
                  "unemployment": score(obs_month, sim_month, train_m)},
        "test": {"deaths": score(obs_daily_deaths, sim_daily_deaths, test_d),
                 "unemployment": score(obs_month, sim_month, ~train_m)},
    }


def _initial_conditions(inv: SIRInversion, day: int = 0) -> InitialConditions:
    return InitialConditions(inv.susceptible[day], inv.infected[day], inv.recovered[day],
                             inv.vaccinated[day])


FITTED_FIELDS = ("population", "beta_slope", "beta_intercept", "unemployment_weights",
                 "baseline_unemployment", "filter_decays", "filter_length", "stringency_delay",
                 "initial_stringency", "region_names")


def calibrate(ds: CalibrationDataset, config: CalibrationConfig = CalibrationConfig(),
              constants: dict | None = None) -> tuple[WorldParams, InitialConditions, FitReport]:
    """Fit transmission and unemployment parameters on the training window.

    ``constants`` overrides the WorldParams fields that are not fitted
    (mortality, recovery, vaccination, output per worker, subsidy scale).
    Ridge strengths are tuned on the ``validation_days`` after the split when
    several candidates are given.
    """
    ds.validate()
    split = ds.day_index(config.split_date)
    if not 2 < split < ds.num_days - 1:
        raise DataError([f"split date {config.split_date} must fall inside the data range"])
    n = ds.population
    constants = dict(constants or {})
    clash = set(constants) & set(FITTED_FIELDS)
    if clash:
        raise ValueError(f"fitted fields cannot be overridden: {sorted(clash)}")
    template = WorldParams(population=n, beta_slope=np.zeros_like(n), beta_intercept=np.zeros_like(n),
                           unemployment_weights=np.zeros((n.size, config.num_filters)),
                           baseline_unemployment=np.zeros_like(n),
                           filter_decays=np.ones(config.num_filters), **constants)
    supply = np.stack([vaccination_supply(t, template) for t in range(ds.num_days)])
    inv = invert_sir(ds.deaths, n, template.mortality, template.recovery, supply, ds.dates)
    valid_end = min(ds.num_days, split + 1 + config.validation_days)

    beta_train = inv.beta.copy()
    beta_train[split + 1:] = np.nan
    lo, hi = config.delay_candidates
    delay, corr = select_delay(ds.stringency, beta_train, range(lo, hi + 1))
    delayed = lagged(ds.stringency, delay)

    best_tr = None
    for ridge in config.transmission_ridges:
        fit = fit_transmission(beta_train, delayed, ridge)
        pred = np.maximum(fit.slope * delayed + fit.intercept, 0.0)
        score = r_squared(inv.beta[split + 1:valid_end], pred[split + 1:valid_end])
        if len(config.transmission_ridges) == 1 or best_tr is None or score > best_tr[0]:
            best_tr = (score, ridge, fit)
    _, tr_ridge, tr_fit = best_tr

    workers = template.working_age_fraction * n
    delta = stringency_changes(ds.stringency)
    persons = ds.unemployment_rate * workers
    groups = None
    if config.unemployment_target == "monthly":
        groups = np.array([d[:7] for d in ds.dates[: split + 1]])
    best_un = None
    for ridge in config.unemployment_ridges:
        fit = fit_unemployment(persons[: split + 1], delta[: split + 1], n,
                               template.working_age_fraction, config.num_filters,
                               config.filter_length, ridge, config.initial_decays,
                               max_sweeps=config.max_sweeps, groups=groups)
        resp = filter_responses(delta, fit.decays, config.filter_length)
        pred = (softplus(np.einsum("tik,ik->ti", resp, fit.weights)) + fit.baseline) / workers
        score = r_squared(ds.unemployment_rate[split + 1:valid_end], pred[split + 1:valid_end])
        if len(config.unemployment_ridges) == 1 or best_un is None or score > best_un[0]:
            best_un = (score, ridge, fit)
    _, un_ridge, un_fit = best_un

    params_dict = template.to_dict()
    params_dict.update(
        population=n.tolist(),
        beta_slope=tr_fit.slope.tolist(),
        beta_intercept=tr_fit.intercept.tolist(),
        unemployment_weights=un_fit.weights.tolist(),
        baseline_unemployment=un_fit.baseline.tolist(),
        filter_decays=un_fit.decays.tolist(),
        filter_length=config.filter_length,
        stringency_delay=delay,
        initial_stringency=ds.stringency[0].tolist(),
        region_names=list(ds.regions),
    )
    params = WorldParams.from_dict(params_dict)
    initial = _initial_conditions(inv, 0)
    r2 = evaluate_fit(ds, params, initial, config.split_date, config.payment_spread_days)
    report = FitReport(
        delay=delay,
        beta_slope=tr_fit.slope.tolist(),
        beta_intercept=tr_fit.intercept.tolist(),
        filter_decays=un_fit.decays.tolist(),
        unemployment_weights=un_fit.weights.tolist(),
        baseline_unemployment=un_fit.baseline.tolist(),
        transmission_ridge=tr_ridge,
        unemployment_ridge=un_ridge,
        unemployment_loss=un_fit.loss,
        unemployment_converged=un_fit.converged,
        r2=r2,
        split_date=config.split_date,
        delay_correlations=[None if np.isnan(c) else float(c) for c in corr],
    )
    return params, initial, report


def write_calibration(out_dir, params: WorldParams, initial: InitialConditions, report: FitReport,
                      start_date: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"start_date": start_date, "world": params.to_dict(), "initial": initial.to_dict()}
    (out / "params.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    (out / "fit_report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))


def read_calibration(path) -> tuple[WorldParams, InitialConditions, str]:
    payload = json.loads(Path(path).read_text())
    return (WorldParams.from_dict(payload["world"]), InitialConditions.from_dict(payload["initial"]),
            payload.get("start_date", "2020-03-22"))
