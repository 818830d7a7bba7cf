"""Directional reproductions at desk scale: model ordering, treatment awareness,
balancing, the confounding sweep and the MSM weights. All are slow."""

from dataclasses import replace

import numpy as np
import pytest

from msct.baselines import fit_msm, fit_propensity, stabilized_weights
from msct.dgp.benchmark import build_benchmark
from msct.dgp.config import BenchmarkSizes, DgpConfig
from msct.dgp.simulate import DgpOracle
from msct.eval import probe_balance, treatment_awareness
from msct.eval.harness import EvalConfig, omega_sweep
from msct.pipelines.pipeline import PipelineConfig, evaluate_forecaster, train_forecaster

pytestmark = pytest.mark.slow

DESK_SIZES = BenchmarkSizes(train=200, val=50, test=50)
DESK_TEMPLATE = {"model_options": {"d_h": 32}, "train_options": {"epochs": 30, "batch_size": 64}}
SEEDS = [0, 1, 2]


def _train(benchmark, model, seed, **train_options):
    cfg = PipelineConfig(
        model=model,
        seed=seed,
        model_options=dict(DESK_TEMPLATE["model_options"]),
        train_options={**DESK_TEMPLATE["train_options"], **train_options},
    )
    return train_forecaster(cfg, benchmark)


@pytest.fixture(scope="module")
def desk():
    return build_benchmark(DgpConfig(omega=5), DESK_SIZES)


@pytest.fixture(scope="module")
def desk_models(desk):
    return {seed: {name: _train(desk, name, seed) for name in ("msct", "lstm-baseline")} for seed in SEEDS}


def test_msct_beats_the_lstm_baseline_at_long_horizons(desk, desk_models):
    rmse = {
        name: np.mean(
            [evaluate_forecaster(models[name], desk, "test", anchor_stride=2).rmse for models in desk_models.values()],
            axis=0,
        )
        for name in ("msct", "lstm-baseline")
    }
    # horizons 4, 5 and 6
    assert np.all(rmse["msct"][3:6] < rmse["lstm-baseline"][3:6])


def test_trained_msct_predicts_lower_speed_under_an_immediate_crash(desk, desk_models):
    shares = [
        treatment_awareness(models["msct"], desk.units("test"), desk.tau_max, anchor_stride=2)
        for models in desk_models.values()
    ]
    assert np.mean(shares) >= 0.9


def test_balancing_makes_the_representation_less_predictive_of_treatment(desk):
    accuracy = {lam: [] for lam in (0.0, 1.0)}
    for seed in range(5):
        for lam in accuracy:
            model = _train(desk, "msct", seed, lam=lam)
            accuracy[lam].append(probe_balance(model, desk.units("test"), seed=seed).accuracy)
    assert np.mean(accuracy[1.0]) < np.mean(accuracy[0.0])


def test_longer_confounding_windows_do_not_raise_the_long_horizon_error():
    reports = omega_sweep(
        [1, 5, 10],
        DgpConfig(),
        EvalConfig(seeds=SEEDS, models=["msct"], anchor_stride=2, include_reserved=False),
        sizes=DESK_SIZES,
        template=DESK_TEMPLATE,
    )
    points = sorted((r.axis_value, r.rmse[5], r.rmse_std[5]) for r in reports if r.model == "msct")
    assert [p[0] for p in points] == [1, 5, 10]
    for (_, before, before_std), (_, after, after_std) in zip(points, points[1:]):
        pooled = np.sqrt((before_std**2 + after_std**2) / 2.0)
        assert after <= before + pooled


def _population(cfg, n=300):
    oracle = DgpOracle.calibrate(cfg, range(n))
    return [oracle.unit(i) for i in range(n)]


def test_stabilized_weights_move_the_crash_effect_towards_the_unconfounded_fit():
    weighted_error, unweighted_error = [], []
    for seed in range(5):
        cfg = DgpConfig(seed=seed, assignment_noise_std=0.3)
        units = _population(cfg)
        numerator = fit_propensity(units, "treatments-only")
        denominator = fit_propensity(units, "history")
        weights = stabilized_weights(numerator, denominator, units, tau=0)
        assert np.all(weights.values > 0)
        assert weights.mean == pytest.approx(1.0, abs=0.1)

        reference = fit_msm(_population(replace(cfg, confounded=False)), None, tau=0).beta1[0]
        weighted_error.append(abs(fit_msm(units, weights, tau=0).beta1[0] - reference))
        unweighted_error.append(abs(fit_msm(units, None, tau=0).beta1[0] - reference))
    assert np.mean(weighted_error) < np.mean(unweighted_error)
