"""Tests for the naive, recurrent and marginal-structural-model baselines."""

import json

import numpy as np
import pytest

from msct.baselines import (
    MsmForecaster,
    NaiveForecaster,
    RecurrentConfig,
    RecurrentForecaster,
    RecurrentTrainer,
    fit_msm,
    fit_propensity,
    load_recurrent,
    recurrent_forecaster,
    save_recurrent,
    stabilized_weights,
)
from msct.baselines.msm import lag_stack, msm_design
from msct.data import Normalizer, make_batch
from msct.dgp.benchmark import build_benchmark
from msct.dgp.config import BenchmarkSizes, DgpConfig, sliding_strategies
from msct.dgp.simulate import TimeSeriesUnit
from msct.errors import ConfigError, DatasetError, HorizonRangeError, UsageError
from msct.models.checkpoint import write_container

TAU = 3


@pytest.fixture(scope="module")
def benchmark():
    cfg = DgpConfig(seq_len=20, tau_max=TAU, seed=11, crash_percentile=80)
    return build_benchmark(cfg, BenchmarkSizes(train=30, val=4, test=2))


def _linear_units(n=20, length=15, seed=0):
    """Speeds that respond linearly to the current and previous crash."""
    rng = np.random.default_rng(seed)
    units = []
    for i in range(n):
        t = (rng.random(length) < 0.3).astype(np.int64)
        t[0] = 0
        previous = np.concatenate([[0], t[:-1]])
        y = 50.0 - 5.0 * t - 2.0 * previous
        units.append(
            TimeSeriesUnit(x=rng.normal(size=(length, 1)), t=t, t_type=t.copy(), y=y, s=rng.random(1), index=i)
        )
    return units


# --- naive ---------------------------------------------------------------------


def test_naive_repeats_the_anchor_speed(benchmark):
    unit = benchmark.units("test")[0]
    naive = NaiveForecaster(TAU).fit()
    preds = naive.rollout_unit(unit, [2, 5], sliding_strategies(TAU))
    assert preds.shape == (2, TAU + 1, TAU + 1)
    np.testing.assert_array_equal(preds[0], unit.y[2])
    np.testing.assert_array_equal(preds[1], unit.y[5])
    np.testing.assert_array_equal(naive.predict_factual(unit, [4], 2), [[unit.y[4], unit.y[4]]])


def test_naive_rejects_anchors_outside_the_sequence(benchmark):
    unit = benchmark.units("test")[0]
    with pytest.raises(HorizonRangeError):
        NaiveForecaster(TAU).predict_factual(unit, [unit.seq_len], 1)
    with pytest.raises(HorizonRangeError):
        NaiveForecaster(TAU).predict_factual(unit, [], 1)


# --- recurrent -----------------------------------------------------------------


def _recurrent(benchmark, cell="lstm", **overrides):
    cfg = RecurrentConfig(**{"cell": cell, "d_h": 6, "tau_max": TAU, "dropout": 0.0, "seed": 4, **overrides})
    return RecurrentForecaster(cfg, Normalizer.fit(benchmark.units("train")))


def test_recurrent_config_rejects_unknown_cell():
    with pytest.raises(ConfigError):
        RecurrentConfig(cell="bilstm")
    with pytest.raises(ConfigError):
        RecurrentConfig(dropout=1.0)


@pytest.mark.parametrize("cell", ["lstm", "gru", "rnn"])
def test_recurrent_rollout_shapes_and_branch_agreement(benchmark, cell):
    model = _recurrent(benchmark, cell)
    assert model.name == f"{cell}-baseline"
    strategies = sliding_strategies(TAU)
    preds = model.rollout_unit(benchmark.units("test")[1], [3, 6], strategies)
    assert preds.shape == (2, len(strategies), TAU + 1)
    assert np.all(np.isfinite(preds))
    none = preds[:, -1]
    for k in range(TAU):
        np.testing.assert_allclose(preds[:, k, :k], none[:, :k])


def test_recurrent_factual_prediction_shape(benchmark):
    model = _recurrent(benchmark)
    unit = benchmark.units("val")[0]
    assert model.predict_factual(unit, [1, 4, 8], TAU + 1).shape == (3, TAU + 1)
    with pytest.raises(HorizonRangeError):
        model.predict_factual(unit, [unit.seq_len - 2], TAU + 1)


def test_recurrent_training_logs_and_restores_best_epoch(benchmark, tmp_path):
    model = _recurrent(benchmark, dropout=0.1)
    normalizer = model.normalizer
    train = make_batch(benchmark.units("train"), normalizer, 2)
    val = make_batch(benchmark.units("val"), normalizer, 2)
    log = tmp_path / "recurrent.jsonl"
    trainer = RecurrentTrainer(model, epochs=3, batch_size=8, lr=0.01, patience=1, log_path=log)
    history = trainer.fit(train, val)
    records = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["epoch"] for r in records] == [r["epoch"] for r in history]
    assert all(r["phase"] == "lstm-baseline" for r in records)
    assert trainer.val_rmse(val) == pytest.approx(min(r["val_rmse"] for r in history))


def test_recurrent_trainer_validates_arguments(benchmark):
    with pytest.raises(ConfigError):
        RecurrentTrainer(_recurrent(benchmark), batch_size=0)


def test_recurrent_round_trip_through_container(benchmark, tmp_path):
    normalizer = Normalizer.fit(benchmark.units("train"))
    train = make_batch(benchmark.units("train"), normalizer, 2)
    cfg = RecurrentConfig(cell="gru", d_h=5, tau_max=TAU, seed=2)
    model = recurrent_forecaster(train, cfg, normalizer, epochs=1, batch_size=16)
    path = save_recurrent(tmp_path / "gru.ckpt", model, {"run": "unit"})
    loaded, extras = load_recurrent(path)
    assert extras == {"run": "unit"}
    assert loaded.cfg == model.cfg
    unit = benchmark.units("test")[0]
    strategies = sliding_strategies(TAU)
    np.testing.assert_array_equal(model.rollout_unit(unit, [5], strategies), loaded.rollout_unit(unit, [5], strategies))


def test_loading_a_foreign_container_as_recurrent_fails(tmp_path):
    path = write_container(tmp_path / "other.ckpt", {"model": "msct"}, {})
    with pytest.raises(DatasetError):
        load_recurrent(path)


# --- marginal structural model ---------------------------------------------------


def test_lag_stack_shifts_with_edge_or_zero_fill():
    values = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(lag_stack(values, [1], edge=False)[0, :, 0], [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(lag_stack(values, [1], edge=True)[0, :, 0], [1.0, 1.0, 2.0])
    np.testing.assert_array_equal(lag_stack(values, [0, 2], edge=True)[0, :, 1], [1.0, 1.0, 1.0])


@pytest.mark.parametrize("kwargs", [{"conditioning": "future"}, {"window": 0}, {"floor": 0.5}])
def test_propensity_options_are_validated(kwargs):
    with pytest.raises(ConfigError):
        fit_propensity(_linear_units(4), **kwargs)


def test_constant_treatment_falls_back_to_the_clamped_marginal():
    units = _linear_units(5)
    for u in units:
        u.t[:] = 0
    model = fit_propensity(units, "history", window=3)
    assert model.separated
    np.testing.assert_allclose(model.predict_proba(units), model.floor)


def test_identical_propensity_models_give_unit_weights():
    units = _linear_units(10)
    model = fit_propensity(units, "treatments-only", window=2)
    weights = stabilized_weights(model, model, units, tau=2)
    assert weights.values.shape == (10, 15 - 1 - 2)
    np.testing.assert_allclose(weights.values, 1.0)
    assert weights.flagged == 0


def test_stabilized_weights_are_positive_and_capped(benchmark):
    units = benchmark.units("train")
    numerator = fit_propensity(units, "treatments-only")
    denominator = fit_propensity(units, "history")
    weights = stabilized_weights(numerator, denominator, units, tau=1, cap_percentile=90)
    assert np.all(weights.values > 0)
    assert weights.max <= weights.cap
    assert weights.flagged == int(np.sum(weights.raw > weights.cap))
    with pytest.raises(HorizonRangeError):
        stabilized_weights(numerator, denominator, units, tau=units[0].seq_len)


def test_msm_design_layout():
    units = _linear_units(3)
    design, target, d = msm_design(units, tau=1, baseline_outcome=True)
    assert d == 2
    assert design.shape == (3, 15 - 2, 1 + 2 + d * 2 + d)
    np.testing.assert_array_equal(design[..., 0], 1.0)
    np.testing.assert_array_equal(target[0], units[0].y[2:])


@pytest.mark.parametrize("tau,expected", [(1, [-2.0, -5.0]), (2, [0.0, -2.0, -5.0])])
def test_unweighted_msm_recovers_linear_treatment_effects(tau, expected):
    model = fit_msm(_linear_units(), weights=None, tau=tau)
    assert not model.weighted and not model.ridge
    np.testing.assert_allclose(model.beta1, expected, atol=1e-8)
    np.testing.assert_allclose(model.beta2, 0.0, atol=1e-8)
    assert model.beta0 == pytest.approx(50.0)
    assert model.beta1_se.shape == (tau + 1,)


def test_msm_rejects_weights_for_another_horizon():
    units = _linear_units(8)
    model = fit_propensity(units, "treatments-only", window=2)
    weights = stabilized_weights(model, model, units, tau=1)
    with pytest.raises(UsageError):
        fit_msm(units, weights, tau=2)


def test_msm_forecaster_fit_rollout_and_report(benchmark, tmp_path):
    forecaster = MsmForecaster(tau_max=TAU, window=3).fit(benchmark.units("train"))
    unit = benchmark.units("test")[0]
    strategies = sliding_strategies(TAU)
    preds = forecaster.rollout_unit(unit, [2, 7], strategies)
    assert preds.shape == (2, len(strategies), TAU + 1)
    assert np.all(np.isfinite(preds))
    assert forecaster.predict_factual(unit, [2, 7], TAU + 1).shape == (2, TAU + 1)

    report = forecaster.report()
    assert [h["tau"] for h in report] == list(range(TAU + 1))
    assert all(h["weighted"] and h["baseline_outcome"] for h in report)

    loaded = MsmForecaster.load(forecaster.save(tmp_path / "msm.json"))
    np.testing.assert_allclose(loaded.rollout_unit(unit, [2, 7], strategies), preds)


def test_msm_forecaster_guards(benchmark, tmp_path):
    unit = benchmark.units("test")[0]
    with pytest.raises(UsageError):
        MsmForecaster(tau_max=TAU).predict_factual(unit, [2], 1)
    forecaster = MsmForecaster(tau_max=1, window=2).fit(benchmark.units("train"))
    with pytest.raises(HorizonRangeError):
        forecaster.predict_factual(unit, [2], 3)
    bogus = tmp_path / "bogus.json"
    bogus.write_text(json.dumps({"model": "naive"}))
    with pytest.raises(DatasetError):
        MsmForecaster.load(bogus)
