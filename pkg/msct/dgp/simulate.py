"""Synthetic speed process: daily trend, confounded crash assignment, crash
impact with dissipating recovery, and counterfactual branch simulation.

All randomness of a unit is drawn up front into :class:`UnitNoise`, so a
counterfactual branch reuses the exact covariates, noise and latent crash
types of the factual run and differs only in the treatments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from msct.dgp.config import DAY_STEPS, DgpConfig, InterventionStrategy
from msct.errors import ConfigError, HorizonRangeError, NumericalError, UsageError


@dataclass
class UnitNoise:
    index: int
    t0: int
    x: np.ndarray  # (L,)
    eps: np.ndarray  # (L,)
    crash_type: np.ndarray  # (L,) latent type index into beta2_menu
    assignment_noise: np.ndarray  # (L,)
    uniforms: np.ndarray  # (L,) for unconfounded Bernoulli assignment


@dataclass
class TimeSeriesUnit:
    x: np.ndarray  # (L, d_x)
    t: np.ndarray  # (L,) crash indicator
    t_type: np.ndarray  # (L,) 0 = none, k = crash type k
    y: np.ndarray  # (L,)
    s: np.ndarray  # (d_s,)
    crash_times: list[int] = field(default_factory=list)
    index: int = -1
    t0: int = 0
    noise: UnitNoise | None = field(default=None, repr=False)

    @property
    def seq_len(self) -> int:
        return len(self.y)


def unit_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([master_seed, index])


def draw_unit_noise(cfg: DgpConfig, index: int) -> UnitNoise:
    rng = unit_rng(cfg.seed, index)
    L = cfg.seq_len
    t0 = int(rng.integers(0, DAY_STEPS))
    x = rng.standard_normal(L)
    eps = rng.normal(0.0, cfg.eps_std, size=L) if cfg.eps_std > 0 else np.zeros(L)
    crash_type = rng.choice(len(cfg.p_c), size=L, p=np.asarray(cfg.p_c))
    assignment_noise = rng.standard_normal(L) * cfg.assignment_noise_std
    uniforms = rng.random(L)
    return UnitNoise(index, t0, x, eps, crash_type, assignment_noise, uniforms)


# --- deterministic pieces --------------------------------------------------


def base_speed(t, cfg: DgpConfig):
    """Daily speed trend: ``psi`` minus a Gaussian dip centred on hour ``mu``.

    The day clock is ``(t mod DAY_STEPS) / 30`` on continuous values in [0, 12).
    """
    phi = np.mod(t, DAY_STEPS) / 30.0
    dip = np.exp(-((phi - cfg.mu) ** 2) / (2.0 * cfg.sigma**2)) / (cfg.sigma * np.sqrt(2.0 * np.pi))
    return cfg.psi - cfg.amp * dip


def dissipation(d: int, duration: int = 5) -> float:
    """Recovery exponent ``d`` steps after a crash; 1.25 - 0.25 d for the default
    five-step impact, linearly reaching zero at ``duration``."""
    if d < 1 or d > duration:
        return 0.0
    if duration == 1:
        return 1.0
    return (duration - d) / (duration - 1)


def confounded_moving_average(x: Sequence[float], t: int, omega: int) -> float:
    """Mean of the last ``min(t, omega)`` values ending at 1-based step ``t``."""
    if t < 1 or omega < 1:
        raise UsageError(f"empty moving-average window (t={t}, omega={omega})")
    window = np.asarray(x[max(0, t - omega) : t], dtype=np.float64)
    if window.size == 0:
        raise UsageError(f"empty moving-average window (t={t}, omega={omega})")
    return float(window.mean())


def moving_averages(x: np.ndarray, omega: int) -> np.ndarray:
    """Moving average at every 0-based step ``i`` (window ending at and including ``i``)."""
    cumulative = np.concatenate([[0.0], np.cumsum(x)])
    ends = np.arange(1, len(x) + 1)
    starts = np.maximum(0, ends - omega)
    return (cumulative[ends] - cumulative[starts]) / (ends - starts)


def step_speed(
    y_prev: float,
    x_t: float,
    t_t: int,
    beta2_t: float,
    t: int,
    crash_times: Sequence[int],
    cfg: DgpConfig,
    eps_t: float,
    base_t: float | None = None,
    base_prev: float | None = None,
) -> float:
    """One step of the speed recursion at absolute step ``t``.

    ``crash_times`` are step indices on the same clock as ``t``; the recovery
    exponent uses the most recent crash at or before ``t``. The result is
    clamped to ``cfg.speed_floor``, so every branch stays strictly positive.
    """
    base_t = base_speed(t, cfg) if base_t is None else base_t
    base_prev = base_speed(t - 1, cfg) if base_prev is None else base_prev
    past = [c for c in crash_times if c <= t]
    g = dissipation(t - max(past), cfg.impact_duration) if past else 0.0

    ratio = y_prev / base_prev
    if ratio <= 0 and g != 0.0:
        raise NumericalError("step_speed", f"non-positive speed ratio {ratio:.4g} with exponent {g}")
    trend = base_t * (ratio**g if g != 0.0 else 1.0)
    y_t = (cfg.beta1 * x_t - beta2_t * t_t + eps_t) * y_prev + trend
    return max(y_t, cfg.speed_floor)


# --- assignment ------------------------------------------------------------


def calibrate_threshold(covariates: np.ndarray, cfg: DgpConfig) -> float:
    """Population percentile of the covariate moving average over all units and steps."""
    if cfg.crash_percentile >= 100:
        return float("inf")
    covariates = np.atleast_2d(np.asarray(covariates, dtype=np.float64))
    averages = np.concatenate([moving_averages(row, cfg.omega)[1:] for row in covariates])
    if averages.size == 0 or np.ptp(averages) == 0.0:
        raise ConfigError("dgp.crash_percentile", "covariate moving average is degenerate")
    return float(np.percentile(averages, cfg.crash_percentile))


def assign_treatments(
    noise: UnitNoise, cfg: DgpConfig, threshold: float
) -> tuple[np.ndarray, np.ndarray]:
    """Crash indicators and type labels (1-based, 0 = none) for one unit.

    Step 0 seeds the recursion and never carries a crash.
    """
    if cfg.confounded:
        score = moving_averages(noise.x, cfg.omega) + noise.assignment_noise
        t = (score >= threshold).astype(np.int64)
    else:
        t = (noise.uniforms < cfg.crash_rate).astype(np.int64)
    t[0] = 0
    t_type = np.where(t == 1, noise.crash_type + 1, 0)
    return t, t_type


# --- trajectories ----------------------------------------------------------


def unit_base(noise: UnitNoise, cfg: DgpConfig) -> np.ndarray:
    """Trend over the whole unit, always evaluated as one array so branches match bitwise."""
    return base_speed(noise.t0 + np.arange(cfg.seq_len), cfg)


def roll_forward(
    noise: UnitNoise,
    cfg: DgpConfig,
    treatments: np.ndarray,
    y_start: float,
    start: int,
    stop: int,
    crash_times: Sequence[int],
) -> np.ndarray:
    """Simulate steps ``start+1 .. stop-1`` from ``y_start`` at step ``start``.

    ``treatments`` is indexed by step; ``crash_times`` holds crashes before
    ``start + 1``. Returns speeds for steps ``start+1 .. stop-1``.
    """
    menu = np.asarray(cfg.beta2_menu)
    base = unit_base(noise, cfg)
    crashes = list(crash_times)
    y_prev = y_start
    out = np.empty(stop - start - 1)
    for i in range(start + 1, stop):
        if treatments[i]:
            crashes.append(i)
        y_prev = step_speed(
            y_prev,
            noise.x[i],
            int(treatments[i]),
            menu[noise.crash_type[i]],
            i,
            crashes,
            cfg,
            noise.eps[i],
            base_t=base[i],
            base_prev=base[i - 1],
        )
        out[i - start - 1] = y_prev
    return out


def simulate_unit(noise: UnitNoise, cfg: DgpConfig, threshold: float) -> TimeSeriesUnit:
    t, t_type = assign_treatments(noise, cfg, threshold)
    y = np.empty(cfg.seq_len)
    y[0] = unit_base(noise, cfg)[0]
    y[1:] = roll_forward(noise, cfg, t, y[0], 0, cfg.seq_len, [])
    return TimeSeriesUnit(
        x=noise.x[:, None].copy(),
        t=t,
        t_type=t_type,
        y=y,
        s=np.array([noise.t0 / DAY_STEPS]),
        crash_times=[int(i) for i in np.flatnonzero(t)],
        index=noise.index,
        t0=noise.t0,
        noise=noise,
    )


def generate_unit(cfg: DgpConfig, unit_index: int, threshold: float | None = None) -> TimeSeriesUnit:
    """Factual trajectory of unit ``unit_index`` under ``cfg.seed``.

    Without a population ``threshold`` the unit's own covariates calibrate it.
    """
    noise = draw_unit_noise(cfg, unit_index)
    if threshold is None:
        threshold = calibrate_threshold(noise.x[None, :], cfg)
    return simulate_unit(noise, cfg, threshold)


def simulate_counterfactuals(
    unit: TimeSeriesUnit,
    t: int,
    strategies: Sequence[InterventionStrategy],
    cfg: DgpConfig,
    horizon: int | None = None,
) -> np.ndarray:
    """Potential outcomes ``Y_{t+1..t+horizon}`` for each strategy, branching at anchor ``t``.

    Entry ``k`` of a strategy is the crash indicator of step ``t+1+k``;
    strategies shorter than ``horizon`` are zero-padded. Returns
    ``(len(strategies), horizon)``.
    """
    if not strategies:
        raise UsageError("simulate_counterfactuals needs at least one strategy")
    lengths = {len(s) for s in strategies}
    if len(lengths) != 1:
        raise UsageError(f"strategies must share one horizon, got lengths {sorted(lengths)}")
    horizon = lengths.pop() if horizon is None else horizon
    if t < 0 or t + horizon >= unit.seq_len:
        raise HorizonRangeError(
            f"anchor {t} with horizon {horizon} exceeds sequence length {unit.seq_len}"
        )
    noise = unit.noise if unit.noise is not None else draw_unit_noise(cfg, unit.index)

    history = [c for c in unit.crash_times if c <= t]
    out = np.empty((len(strategies), horizon))
    for row, strategy in enumerate(strategies):
        treatments = np.zeros(t + horizon + 1, dtype=np.int64)
        treatments[: t + 1] = unit.t[: t + 1]
        treatments[t + 1 :] = strategy.padded(horizon)[:horizon]
        out[row] = roll_forward(noise, cfg, treatments, float(unit.y[t]), t, t + horizon + 1, history)
    return out


class DgpOracle:
    """Population-calibrated simulator: factual units plus counterfactual branches."""

    def __init__(self, cfg: DgpConfig, threshold: float):
        self.cfg = cfg
        self.threshold = threshold

    @classmethod
    def calibrate(cls, cfg: DgpConfig, indices: Sequence[int]) -> "DgpOracle":
        covariates = np.stack([draw_unit_noise(cfg, i).x for i in indices])
        return cls(cfg, calibrate_threshold(covariates, cfg))

    def unit(self, index: int) -> TimeSeriesUnit:
        return simulate_unit(draw_unit_noise(self.cfg, index), self.cfg, self.threshold)

    def counterfactuals(self, unit, t, strategies, horizon=None) -> np.ndarray:
        return simulate_counterfactuals(unit, t, strategies, self.cfg, horizon=horizon)
