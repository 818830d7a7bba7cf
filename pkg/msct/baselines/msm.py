"""Linear marginal structural model with stabilized inverse-probability weights.

Propensities are logistic regressions over a fixed lag window: the numerator
conditions on past treatments only, the denominator on the full observed
history (covariates, past outcomes, past treatments, static features). The
outcome model regresses ``Y_{t+tau}`` on the treatments ``T_t .. T_{t+tau}``,
their interactions with the static features and the static features, weighted
by the stabilized weights over the same steps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import statsmodels.api as sm
from numpy.lib.stride_tricks import sliding_window_view
from statsmodels.tools.sm_exceptions import PerfectSeparationError, PerfectSeparationWarning

from msct.data import factual_plans, strategy_plans
from msct.dgp.config import InterventionStrategy
from msct.dgp.simulate import TimeSeriesUnit
from msct.errors import ConfigError, DatasetError, HorizonRangeError, UsageError
from msct.logging_config import logger
from msct.utils.json_utils import read_json, write_json

CONDITIONING = ("history", "treatments-only")
PROB_FLOOR = 1e-3
RIDGE = 1e-6


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _stack(units: Sequence[TimeSeriesUnit], attr: str) -> np.ndarray:
    if not units:
        raise UsageError("no units to fit on")
    lengths = {u.seq_len for u in units}
    if len(lengths) != 1:
        raise DatasetError(f"units differ in length: {sorted(lengths)}")
    return np.stack([np.asarray(getattr(u, attr), dtype=np.float64) for u in units])


def lag_stack(values: np.ndarray, lags: Sequence[int], edge: bool) -> np.ndarray:
    """``(N, L, len(lags))``: column ``m`` holds ``values`` delayed by ``lags[m]`` steps.

    Steps before the start are filled with the first value (``edge``) or zero.
    """
    N, L = values.shape
    out = np.empty((N, L, len(lags)))
    for m, lag in enumerate(lags):
        shifted = np.roll(values, lag, axis=1)
        shifted[:, :lag] = values[:, :1] if edge else 0.0
        out[:, :, m] = shifted
    return out


@dataclass
class PropensityModel:
    """``pr(T_t = 1 | .)`` for steps ``1 .. L-1`` of every unit."""

    conditioning: str
    window: int
    params: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    floor: float = PROB_FLOOR
    separated: bool = False

    def features(self, units: Sequence[TimeSeriesUnit]) -> np.ndarray:
        """Raw lag features ``(N, L-1, p)`` without the intercept."""
        t = _stack(units, "t")
        parts = [lag_stack(t, range(1, self.window + 1), edge=False)]
        if self.conditioning == "history":
            x = _stack(units, "x")
            for j in range(x.shape[-1]):
                parts.append(lag_stack(x[..., j], range(0, self.window), edge=True))
            parts.append(lag_stack(_stack(units, "y"), range(1, self.window + 1), edge=True))
            s = _stack(units, "s")
            parts.append(np.repeat(s[:, None, :], t.shape[1], axis=1))
        return np.concatenate(parts, axis=-1)[:, 1:]

    def design(self, units: Sequence[TimeSeriesUnit]) -> np.ndarray:
        raw = self.features(units)
        scaled = (raw - self.mean) / self.scale
        return np.concatenate([np.ones(raw.shape[:-1] + (1,)), scaled], axis=-1)

    def predict_proba(self, units: Sequence[TimeSeriesUnit]) -> np.ndarray:
        """Clamped treatment probabilities ``(N, L-1)``."""
        p = _sigmoid(self.design(units) @ self.params)
        return np.clip(p, self.floor, 1.0 - self.floor)

    def to_dict(self) -> dict:
        return {
            "conditioning": self.conditioning,
            "window": self.window,
            "params": self.params.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "floor": self.floor,
            "separated": self.separated,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "PropensityModel":
        return cls(
            conditioning=payload["conditioning"],
            window=int(payload["window"]),
            params=np.asarray(payload["params"], dtype=np.float64),
            mean=np.asarray(payload["mean"], dtype=np.float64),
            scale=np.asarray(payload["scale"], dtype=np.float64),
            floor=float(payload["floor"]),
            separated=bool(payload["separated"]),
        )


def fit_propensity(
    units: Sequence[TimeSeriesUnit],
    conditioning: str = "history",
    window: int = 5,
    floor: float = PROB_FLOOR,
) -> PropensityModel:
    """Logistic propensity model over a ``window``-step lag history."""
    if conditioning not in CONDITIONING:
        raise ConfigError("msm.conditioning", f"expected one of {CONDITIONING}")
    if window < 1:
        raise ConfigError("msm.window", "must be >= 1")
    if not 0.0 < floor < 0.5:
        raise ConfigError("msm.floor", "must lie in (0, 0.5)")

    model = PropensityModel(conditioning, window, np.zeros(0), np.zeros(0), np.zeros(0), floor)
    raw = model.features(units)
    p = raw.shape[-1]
    flat = raw.reshape(-1, p)
    model.mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    model.scale = np.where(std > 0, std, 1.0)
    design = model.design(units).reshape(-1, p + 1)
    target = _stack(units, "t")[:, 1:].reshape(-1)

    rate = float(target.mean())
    if rate in (0.0, 1.0):
        logger.warning("propensity (%s): treatment is constant (rate %.1f), using the clamped marginal", conditioning, rate)
        clipped = np.clip(rate, floor, 1.0 - floor)
        model.params = np.zeros(p + 1)
        model.params[0] = np.log(clipped / (1.0 - clipped))
        model.separated = True
        return model

    separated = False
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            result = sm.Logit(target, design).fit(disp=0, maxiter=200)
            params = np.asarray(result.params)
        except (PerfectSeparationError, np.linalg.LinAlgError):
            separated = True
            params = np.asarray(sm.Logit(target, design).fit_regularized(alpha=1e-2, disp=0).params)
    separated |= any(issubclass(w.category, PerfectSeparationWarning) for w in caught)
    if separated or not np.all(np.isfinite(params)):
        logger.warning(
            "propensity (%s): treatment is (nearly) perfectly predictable, probabilities clamped to [%g, %g]",
            conditioning,
            floor,
            1.0 - floor,
        )
        params = np.nan_to_num(params, nan=0.0, posinf=50.0, neginf=-50.0)
        separated = True
    model.params = params
    model.separated = separated
    logger.debug("propensity (%s): %d rows, rate %.4f", conditioning, len(target), rate)
    return model


@dataclass
class StabilizedWeights:
    values: np.ndarray  # (N, L-1-tau) after the cap; column j starts at step j + 1
    raw: np.ndarray
    tau: int
    cap: float
    flagged: int  # weights above the cap
    clamped: int  # probabilities held at the floor
    numerator: dict = field(default_factory=dict)
    denominator: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def max(self) -> float:
        return float(self.values.max())

    @property
    def raw_mean(self) -> float:
        return float(self.raw.mean())


def stabilized_weights(
    num_model: PropensityModel,
    den_model: PropensityModel,
    units: Sequence[TimeSeriesUnit],
    tau: int = 0,
    cap_percentile: float = 99.0,
) -> StabilizedWeights:
    """Products of numerator over denominator probabilities across ``t .. t+tau``."""
    t = _stack(units, "t")[:, 1:]
    if tau < 0 or tau >= t.shape[1]:
        raise HorizonRangeError(f"tau={tau} outside [0, {t.shape[1] - 1}]")
    if not 0 < cap_percentile <= 100:
        raise ConfigError("msm.cap_percentile", "must lie in (0, 100]")
    p_num = num_model.predict_proba(units)
    p_den = den_model.predict_proba(units)
    f_num = np.where(t == 1, p_num, 1.0 - p_num)
    f_den = np.where(t == 1, p_den, 1.0 - p_den)
    clamped = int(np.sum(f_den <= den_model.floor) + np.sum(f_num <= num_model.floor))
    if clamped:
        logger.warning("stabilized weights: %d probabilities held at the floor", clamped)

    logs = np.cumsum(np.log(f_num) - np.log(f_den), axis=1)
    logs = np.concatenate([np.zeros((len(t), 1)), logs], axis=1)
    raw = np.exp(logs[:, tau + 1 :] - logs[:, : logs.shape[1] - tau - 1])
    cap = float(np.percentile(raw, cap_percentile)) if cap_percentile < 100 else float("inf")
    flagged = int(np.sum(raw > cap))
    values = np.minimum(raw, cap)
    logger.info("stabilized weights (tau=%d): mean %.4f, max %.4f, %d capped at %.4f", tau, values.mean(), values.max(), flagged, cap)
    return StabilizedWeights(values, raw, tau, cap, flagged, clamped, num_model.to_dict(), den_model.to_dict())


@dataclass
class MsmModel:
    tau: int
    beta0: float
    beta1: np.ndarray  # (tau + 1,) treatments T_t .. T_{t+tau}
    beta2: np.ndarray  # (d_static, tau + 1) static x treatment interactions
    beta3: np.ndarray  # (d_static,)
    bse: np.ndarray
    sw_mean: float
    sw_max: float
    weighted: bool
    ridge: bool = False
    baseline_outcome: bool = False

    @property
    def beta1_se(self) -> np.ndarray:
        return self.bse[1 : 2 + self.tau]

    def predict(self, treatments: np.ndarray, static: np.ndarray) -> np.ndarray:
        """Expected outcome for treatment windows ``(R, tau + 1)`` and static rows ``(R, d)``."""
        interaction = np.einsum("rd,rt,dt->r", static, treatments, self.beta2)
        return self.beta0 + treatments @ self.beta1 + interaction + static @ self.beta3

    def to_report(self) -> dict:
        return {
            "tau": self.tau,
            "beta0": self.beta0,
            "beta1": self.beta1.tolist(),
            "beta2": self.beta2.reshape(-1).tolist(),
            "beta3": self.beta3.tolist(),
            "sw_mean": self.sw_mean,
            "sw_max": self.sw_max,
            "se": self.bse.tolist(),
            "weighted": self.weighted,
            "ridge": self.ridge,
            "baseline_outcome": self.baseline_outcome,
        }

    @classmethod
    def from_report(cls, payload: dict) -> "MsmModel":
        tau = int(payload["tau"])
        beta3 = np.asarray(payload["beta3"], dtype=np.float64)
        return cls(
            tau=tau,
            beta0=float(payload["beta0"]),
            beta1=np.asarray(payload["beta1"], dtype=np.float64),
            beta2=np.asarray(payload["beta2"], dtype=np.float64).reshape(len(beta3), tau + 1),
            beta3=beta3,
            bse=np.asarray(payload["se"], dtype=np.float64),
            sw_mean=float(payload["sw_mean"]),
            sw_max=float(payload["sw_max"]),
            weighted=bool(payload["weighted"]),
            ridge=bool(payload["ridge"]),
            baseline_outcome=bool(payload["baseline_outcome"]),
        )


def msm_design(units: Sequence[TimeSeriesUnit], tau: int, baseline_outcome: bool = False) -> tuple[np.ndarray, np.ndarray, int]:
    """Rows ``(N, L-1-tau, p)``, targets ``Y_{t+tau}`` and the static width."""
    t = _stack(units, "t")[:, 1:]
    y = _stack(units, "y")
    if tau < 0 or tau >= t.shape[1]:
        raise HorizonRangeError(f"tau={tau} outside [0, {t.shape[1] - 1}]")
    windows = sliding_window_view(t, tau + 1, axis=1)  # (N, L-1-tau, tau+1)
    n_rows = windows.shape[1]
    static = np.repeat(_stack(units, "s")[:, None, :], n_rows, axis=1)
    if baseline_outcome:
        static = np.concatenate([static, y[:, :n_rows, None]], axis=-1)
    d = static.shape[-1]
    interaction = (static[..., :, None] * windows[..., None, :]).reshape(len(units), n_rows, d * (tau + 1))
    design = np.concatenate([np.ones((len(units), n_rows, 1)), windows, interaction, static], axis=-1)
    return design, y[:, 1 + tau :], d


def _ridge(design: np.ndarray, target: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xtw = design.T * weights
    gram = xtw @ design + RIDGE * np.eye(design.shape[1])
    params = np.linalg.solve(gram, xtw @ target)
    resid = target - design @ params
    dof = max(len(target) - design.shape[1], 1)
    sigma2 = float(np.sum(weights * resid**2) / dof)
    bse = np.sqrt(np.clip(np.diag(sigma2 * np.linalg.inv(gram)), 0.0, None))
    return params, bse


def fit_msm(
    units: Sequence[TimeSeriesUnit],
    weights: StabilizedWeights | None = None,
    tau: int | None = None,
    baseline_outcome: bool = False,
) -> MsmModel:
    """Weighted least squares of the outcome model; ``weights=None`` fits unweighted."""
    if tau is None:
        tau = weights.tau if weights is not None else 0
    design, target, d = msm_design(units, tau, baseline_outcome)
    if weights is None:
        w = np.ones(target.shape)
    elif weights.tau != tau or weights.values.shape != target.shape:
        raise UsageError(f"weights for tau={weights.tau} do not match the tau={tau} design")
    else:
        w = weights.values

    p = design.shape[-1]
    flat, y, w_flat = design.reshape(-1, p), target.reshape(-1), w.reshape(-1)
    ridge = np.linalg.matrix_rank(flat) < p
    if ridge:
        logger.warning("MSM design is rank deficient (p=%d); falling back to ridge %g", p, RIDGE)
        params, bse = _ridge(flat, y, w_flat)
    else:
        result = sm.WLS(y, flat, weights=w_flat).fit()
        params, bse = np.asarray(result.params), np.asarray(result.bse)

    width = tau + 1
    return MsmModel(
        tau=tau,
        beta0=float(params[0]),
        beta1=params[1 : 1 + width],
        beta2=params[1 + width : 1 + width + d * width].reshape(d, width),
        beta3=params[1 + width + d * width :],
        bse=bse,
        sw_mean=float(w.mean()),
        sw_max=float(w.max()),
        weighted=weights is not None,
        ridge=bool(ridge),
        baseline_outcome=baseline_outcome,
    )


class MsmForecaster:
    """One weighted outcome model per horizon, conditioned on the anchor outcome."""

    name = "msm"

    def __init__(self, tau_max: int = 5, window: int = 5, cap_percentile: float = 99.0, crash_class: int = 1):
        self.tau_max = tau_max
        self.window = window
        self.cap_percentile = cap_percentile
        self.crash_class = crash_class
        self.models: list[MsmModel] = []

    def fit(self, units: Sequence[TimeSeriesUnit]) -> "MsmForecaster":
        numerator = fit_propensity(units, "treatments-only", self.window)
        denominator = fit_propensity(units, "history", self.window)
        self.models = []
        for tau in range(self.tau_max + 1):
            weights = stabilized_weights(numerator, denominator, units, tau, self.cap_percentile)
            self.models.append(fit_msm(units, weights, tau, baseline_outcome=True))
        return self

    def _check(self, horizon: int) -> None:
        if not self.models:
            raise UsageError("MSM forecaster is not fitted")
        if horizon > len(self.models):
            raise HorizonRangeError(f"horizon {horizon} exceeds fitted {len(self.models)}")

    def _predict(self, unit: TimeSeriesUnit, anchors: np.ndarray, plans: np.ndarray) -> np.ndarray:
        treatments = (plans > 0).astype(np.float64)
        static = np.concatenate([np.repeat(unit.s[None, :], len(anchors), axis=0), unit.y[anchors, None]], axis=1)
        return np.stack(
            [self.models[h].predict(treatments[:, : h + 1], static) for h in range(plans.shape[1])], axis=1
        )

    def rollout_unit(
        self,
        unit: TimeSeriesUnit,
        anchors: Sequence[int],
        strategies: Sequence[InterventionStrategy],
    ) -> np.ndarray:
        plans = strategy_plans(strategies, self.tau_max, self.crash_class)
        self._check(plans.shape[1])
        anchors = np.asarray(list(anchors), dtype=np.int64)
        S, A = len(plans), len(anchors)
        preds = self._predict(unit, np.repeat(anchors, S), np.tile(plans, (A, 1)))
        return preds.reshape(A, S, plans.shape[1])

    def predict_factual(self, unit: TimeSeriesUnit, anchors: Sequence[int], horizon: int) -> np.ndarray:
        self._check(horizon)
        anchors = np.asarray(list(anchors), dtype=np.int64)
        return self._predict(unit, anchors, factual_plans(unit, anchors, horizon, 2))

    def report(self) -> list[dict]:
        return [m.to_report() for m in self.models]

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        write_json(
            path,
            {
                "model": "msm",
                "tau_max": self.tau_max,
                "window": self.window,
                "cap_percentile": self.cap_percentile,
                "crash_class": self.crash_class,
                "horizons": self.report(),
            },
        )
        return path

    @classmethod
    def load(cls, path: str | Path) -> "MsmForecaster":
        payload = read_json(Path(path))
        if payload.get("model") != "msm":
            raise DatasetError(f"{path} is not an MSM model file")
        forecaster = cls(payload["tau_max"], payload["window"], payload["cap_percentile"], payload["crash_class"])
        forecaster.models = [MsmModel.from_report(h) for h in payload["horizons"]]
        return forecaster
