"""Tests for the metrics, model evaluation, report files, experiment harness and diagnostics."""

import json
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from msct.baselines import NaiveForecaster
from msct.data import Normalizer
from msct.dgp.benchmark import Benchmark, build_benchmark
from msct.dgp.config import BenchmarkSizes, DgpConfig, sliding_strategies
from msct.errors import ConfigError, DatasetError, ShapeError, UsageError
from msct.eval import (
    ExperimentReport,
    SeedResult,
    assumption_diagnostics,
    crmse,
    effect_pairs,
    evaluate,
    evaluate_factual,
    positivity_summary,
    probe_balance,
    real_data_traces,
    rmse_per_horizon,
    treatment_awareness,
    treatment_response_curves,
    with_reserved,
    write_reports,
    write_series,
)
from msct.eval.harness import (
    EvalConfig,
    SweepConfig,
    _feasible_size,
    ablation_suite,
    crash_ratio_sweep,
    crash_units,
    load_variants,
    omega_sweep,
    run_seeds,
    subsample_crash_ratio,
)
from msct.eval.report import upsert_summary, write_tables
from msct.models import RESERVED_MODELS, MsctConfig, MsctModel

TAU = 3


@pytest.fixture(scope="module")
def benchmark():
    cfg = DgpConfig(seq_len=14, tau_max=TAU, seed=21, crash_percentile=80)
    return build_benchmark(cfg, BenchmarkSizes(train=12, val=3, test=3))


@pytest.fixture(scope="module")
def calm():
    """No crashes in the observed histories."""
    cfg = DgpConfig(seq_len=14, tau_max=TAU, seed=22, crash_percentile=100)
    return build_benchmark(cfg, BenchmarkSizes(train=4, val=2, test=2))


class _Lookup:
    """Returns the stored true branches as its predictions."""

    def __init__(self, benchmark, split="test"):
        self.cf = {u.index: cf for u, cf in zip(benchmark.units(split), benchmark.counterfactuals[split])}

    def rollout_unit(self, unit, anchors, strategies):
        cf = self.cf[unit.index]
        return np.stack([[np.asarray(cf[a][s.label]) for s in strategies] for a in anchors])


# --- metrics -----------------------------------------------------------------


def test_rmse_reference_value():
    np.testing.assert_allclose(rmse_per_horizon(np.array([[12.0]]), np.array([[10.0]])), [2.0])
    np.testing.assert_allclose(rmse_per_horizon([1.0, 2.0], [1.0, 4.0]), [0.0, 2.0])


def test_rmse_leaves_uncovered_horizons_absent():
    pred = np.array([[1.0, np.nan], [3.0, np.nan]])
    out = rmse_per_horizon(pred, np.zeros_like(pred))
    assert out[0] == pytest.approx(np.sqrt(5.0))
    assert np.isnan(out[1])
    with pytest.raises(ShapeError):
        rmse_per_horizon(np.zeros((2, 3)), np.zeros((3, 2)))


def test_crmse_of_a_single_effect_error():
    pred = np.array([[[-10.0], [0.0]]])
    true = np.array([[[-9.0], [0.0]]])
    result = crmse(pred, true)
    np.testing.assert_allclose(result.values, [1.0])
    assert result.used == 1 and result.skipped == 0


def test_crmse_pools_antisymmetric_errors():
    pred = np.array([[[-10.0], [0.0]], [[-8.0], [0.0]]])
    true = np.array([[[-9.0], [0.0]], [[-9.0], [0.0]]])
    np.testing.assert_allclose(crmse(pred, true).values, [1.0])


def test_crmse_skips_records_with_a_missing_branch():
    pred = np.array([[[-1.0, -1.0], [0.0, 0.0]], [[-2.0, -2.0], [0.0, 0.0]]])
    true = pred.copy()
    true[1, 1] = np.nan
    result = crmse(pred, true)
    assert result.used == 1 and result.skipped == 1
    assert result.coverage == pytest.approx(0.5)
    np.testing.assert_allclose(result.values, [0.0, 0.0])
    with pytest.raises(ShapeError):
        crmse(np.zeros((2, 3, 1)), np.zeros((2, 3, 1)))


def test_effect_pairs_mask_horizons_before_the_crash():
    labels = [s.label for s in sliding_strategies(2)]
    values = np.arange(9.0).reshape(1, 3, 3)
    pairs = effect_pairs(values, labels, 2)
    assert pairs.shape == (2, 2, 2)
    np.testing.assert_array_equal(pairs[0, 0], [0.0, 1.0])
    np.testing.assert_array_equal(pairs[0, 1], [6.0, 7.0])
    assert np.isnan(pairs[1, :, 0]).all()
    np.testing.assert_array_equal(pairs[1, :, 1], [4.0, 7.0])


# --- evaluation ----------------------------------------------------------------


def test_perfect_forecaster_scores_zero(benchmark):
    result = evaluate(_Lookup(benchmark), benchmark)
    np.testing.assert_allclose(result.rmse, np.zeros(TAU + 1))
    np.testing.assert_allclose(result.crmse.values, np.zeros(TAU))
    anchors = len(benchmark.dgp_config.anchors)
    assert result.records == 3 * anchors * (TAU + 1)
    assert result.crmse.used == 3 * anchors * TAU and result.crmse.skipped == 0


def test_naive_effect_error_equals_the_true_effect_size(benchmark):
    result = evaluate(NaiveForecaster(TAU), benchmark)
    effects = [
        cf[a]["crash@0"][0] - cf[a]["none"][0] for cf in benchmark.counterfactuals["test"] for a in cf
    ]
    assert result.crmse.values[0] == pytest.approx(np.sqrt(np.mean(np.square(effects))))


def test_anchor_stride_thins_the_records(benchmark):
    full = evaluate(NaiveForecaster(TAU), benchmark)
    thin = evaluate(NaiveForecaster(TAU), benchmark, anchor_stride=3)
    assert thin.records < full.records


def test_counterfactual_evaluation_needs_expansions(benchmark):
    with pytest.raises(DatasetError):
        evaluate(NaiveForecaster(TAU), benchmark, split="train")


def test_factual_rmse_of_the_naive_forecaster(benchmark):
    units = benchmark.units("val")
    result = evaluate_factual(NaiveForecaster(TAU), units, TAU)
    assert result.crmse is None
    steps = [u.y[a + 1] - u.y[a] for u in units for a in range(1, u.seq_len - TAU - 1)]
    assert result.rmse[0] == pytest.approx(np.sqrt(np.mean(np.square(steps))))
    assert result.rmse.shape == (TAU + 1,)


def test_treatment_awareness(calm):
    assert treatment_awareness(_Lookup(calm), calm.units("test"), TAU) == 1.0
    assert treatment_awareness(NaiveForecaster(TAU), calm.units("test"), TAU) == 0.0


def test_response_curves_and_real_data_traces(benchmark):
    curves = treatment_response_curves(_Lookup(benchmark), benchmark, anchors=[2, 4])
    assert [c["anchor"] for c in curves] == [2, 4]
    for curve in curves:
        np.testing.assert_allclose(curve["pred_crash"], curve["true_crash"])
        np.testing.assert_allclose(curve["pred_none"], curve["true_none"])
        assert curve["horizon"] == list(range(1, TAU + 2))

    units = benchmark.units("test")
    (trace,) = real_data_traces(NaiveForecaster(TAU), units, [1], TAU)
    unit = units[1]
    assert trace["true"] == unit.y[trace["step"]].tolist()
    assert trace["pred"] == unit.y[np.array(trace["step"]) - 1].tolist()


# --- reports -------------------------------------------------------------------


def _report(model="m", rmse=((1.0, None), (3.0, None)), crmse=((0.5,), (1.5,)), **kwargs):
    results = [SeedResult(seed, list(r), list(c)) for seed, (r, c) in enumerate(zip(rmse, crmse))]
    return ExperimentReport.aggregate(model, results, "hash", **kwargs)


def test_seed_aggregation_keeps_absent_horizons_absent():
    report = _report()
    assert report.rmse == [2.0, None]
    assert report.rmse_std == [1.0, None]
    assert report.crmse == [1.0] and report.crmse_std == [0.5]
    rows = report.to_rows()
    assert [r["status"] for r in rows] == ["ok", "absent"]
    assert rows[1]["crmse"] is None
    assert report.meta["strategy_weighting"] == "equal"


def test_reserved_rows_are_appended_as_absent():
    reports = with_reserved([_report()], tau_max=1)
    assert [r.model for r in reports] == ["m", *RESERVED_MODELS]
    assert all(r.status == "absent" and r.rmse == [None, None] for r in reports[1:])
    assert with_reserved([_report()], 1, include=False)[1:] == []


def test_report_files_and_tables(tmp_path):
    reports = with_reserved([_report()], tau_max=1)
    csv_path, json_path = write_reports(reports, tmp_path, "table")
    frame = pd.read_csv(csv_path)
    assert len(frame) == 2 * len(reports)
    assert json.loads(json_path.read_text())[0]["model"] == "m"

    paths = write_tables(reports, tmp_path, "models")
    rmse = pd.read_csv(paths["rmse"], index_col=0)
    assert list(rmse.columns) == ["h1", "h2"]
    assert rmse.loc["m", "h1"] == pytest.approx(2.0)
    assert np.isnan(rmse.loc["RMSN", "h1"])
    assert list(pd.read_csv(paths["crmse"], index_col=0).columns) == ["h1"]


def test_series_collects_sweep_points(tmp_path):
    reports = [_report(axis="omega", axis_value=w) for w in (1, 5)]
    series = write_series(reports, tmp_path / "series.json")
    assert series["m"]["x"] == [1, 5]
    assert series["m"]["y"] == [None, None]
    assert series["m"]["axis"] == "omega"
    assert json.loads((tmp_path / "series.json").read_text()) == series


def test_summary_rows_are_replaced_on_rerun(tmp_path):
    path = tmp_path / "summary.csv"
    upsert_summary([_report("a"), _report("b")], path)
    upsert_summary([_report("a", rmse=((5.0, 7.0), (5.0, 9.0)))], path)
    frame = pd.read_csv(path)
    assert sorted(frame["model"]) == ["a", "b"]
    assert frame.loc[frame["model"] == "a", "rmse_last"].item() == pytest.approx(8.0)


# --- harness -------------------------------------------------------------------


@pytest.mark.parametrize("kwargs", [{"split": "holdout"}, {"seeds": []}, {"anchor_stride": 0}, {"models": ["bilstm"]}])
def test_eval_config_validation(kwargs):
    with pytest.raises(ConfigError):
        EvalConfig(**kwargs)


def test_sweep_config_validation():
    with pytest.raises(ConfigError):
        SweepConfig(omegas=[0])
    with pytest.raises(ConfigError):
        SweepConfig(crash_ratios=[1.5])


def test_run_seeds_reports_every_model_and_reserved_rows(benchmark):
    reports = run_seeds(benchmark, EvalConfig(models=["naive"], seeds=[0, 1]))
    assert [r.model for r in reports] == ["naive", *RESERVED_MODELS]
    naive = reports[0]
    assert naive.seeds == [0, 1]
    assert len(naive.rmse) == TAU + 1 and len(naive.crmse) == TAU
    assert naive.rmse_std == [0.0] * (TAU + 1)
    assert naive.meta["crmse_coverage"] == [1.0, 1.0]


def test_parallel_seeds_match_sequential(benchmark):
    cfg = EvalConfig(models=["naive", "msm"], seeds=[0, 1], include_reserved=False)
    serial = run_seeds(benchmark, cfg, jobs=1)
    parallel = run_seeds(benchmark, cfg, jobs=2)
    assert [r.to_dict() for r in serial] == [r.to_dict() for r in parallel]


def test_omega_sweep_writes_tables_and_series(tmp_path):
    cfg = DgpConfig(seq_len=14, tau_max=TAU, seed=23, crash_percentile=80)
    reports = omega_sweep(
        [1, 4], cfg, EvalConfig(models=["naive"], seeds=[0]), BenchmarkSizes(train=4, val=2, test=2), out_dir=tmp_path
    )
    assert [(r.axis, r.axis_value) for r in reports] == [("omega", 1), ("omega", 4)]
    assert reports[0].config_hash != reports[1].config_hash
    assert (tmp_path / "omega_sweep.csv").exists()
    assert json.loads((tmp_path / "omega_sweep_series.json").read_text())["naive"]["x"] == [1, 4]
    assert (tmp_path / "omega_4" / "data" / "config.json").exists()


def _mixed(benchmark):
    """Training split with six crash units and six crash-free units."""
    train = []
    for i, unit in enumerate(benchmark.units("train")):
        t = np.zeros_like(unit.t)
        if i % 2:
            t[5] = 1
        train.append(replace(unit, t=t))
    splits = {**benchmark.splits, "train": train}
    return Benchmark(benchmark.meta, splits, benchmark.counterfactuals)


def test_crash_ratio_subsampling(benchmark):
    mixed = _mixed(benchmark)
    crashed, clean = crash_units(mixed)
    assert len(crashed) == 6 and len(clean) == 6
    subset = subsample_crash_ratio(mixed, 0.5, 4, seed=1)
    assert sum(u.t.any() for u in subset.units("train")) == 2
    assert subset.meta["crash_ratio"] == 0.5
    assert subset.meta["config_hash"] != subsample_crash_ratio(mixed, 0.25, 4, seed=1).meta["config_hash"]
    assert subset.units("test") is mixed.units("test")
    with pytest.raises(UsageError):
        subsample_crash_ratio(mixed, 1.0, 8)


def test_feasible_size_respects_both_pools():
    assert _feasible_size(0.25, 6, 6) == 8
    assert _feasible_size(0.0, 6, 6) == 6
    assert _feasible_size(1.0, 6, 6) == 6


def test_crash_ratio_sweep_trains_on_equal_sizes(benchmark):
    reports = crash_ratio_sweep([0.0, 0.5], _mixed(benchmark), EvalConfig(models=["naive"], seeds=[0]))
    assert [r.axis_value for r in reports] == [0.0, 0.5]
    assert all(r.status == "ok" for r in reports)


def test_variant_files_load_in_order():
    variants = load_variants()
    assert [v.label for v in variants] == ["MSCT", "w/o transf", "w/o ps", "w/o bl", "w/ gr"]
    no_balancing = variants[3].model.overrides()
    assert no_balancing == {"use_ps": False, "use_hps": False}
    assert variants[3].train.overrides() == {"ps_loss": False, "balancing": "off"}


def test_variant_without_balancing_has_no_propensity_parameters(benchmark):
    overrides = load_variants()[3].model.overrides()
    model = MsctModel(MsctConfig(d_h=8, heads=2, tau_max=TAU, **overrides), Normalizer.fit(benchmark.units("train")))
    groups = model.parameter_groups()
    assert not groups["encoder.theta_PS"] and not groups["encoder.theta_HPS"]


def test_missing_variant_directory_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_variants(tmp_path)


def test_ablation_suite_reports_one_row_per_variant(benchmark, tmp_path):
    template = {
        "model_options": {"d_h": 8, "heads": 2},
        "train_options": {"epochs": 1, "batch_size": 12, "decoder_anchors_per_unit": 1},
    }
    reports = ablation_suite(benchmark, EvalConfig(seeds=[0], anchor_stride=4), template=template, out_dir=tmp_path)
    assert [r.model for r in reports] == ["MSCT", "w/o transf", "w/o ps", "w/o bl", "w/ gr"]
    assert all(len(r.rmse) == TAU + 1 and r.rmse[0] is not None for r in reports)
    assert (tmp_path / "ablation.csv").exists()
    assert (tmp_path / "wo_bl" / "checkpoints").is_dir()


# --- diagnostics ---------------------------------------------------------------


def test_balance_probe_on_frozen_representations(benchmark):
    model = MsctModel(MsctConfig(d_h=8, heads=2, tau_max=TAU, seed=3), Normalizer.fit(benchmark.units("train")))
    probe = probe_balance(model, benchmark.units("train"), seed=1)
    assert 0.0 <= probe.accuracy <= 1.0 and 0.0 <= probe.balanced_accuracy <= 1.0
    assert probe.majority_rate > 0.5
    assert probe.n_train + probe.n_test == 12 * (14 - 1)
    assert set(probe.to_dict()) == {"accuracy", "balanced_accuracy", "majority_rate", "n_train", "n_test"}
    with pytest.raises(UsageError):
        probe_balance(model, benchmark.units("train")[:1])


def test_positivity_summary_bounds(benchmark):
    summary = positivity_summary(benchmark.units("train"), window=3)
    assert summary["floor"] <= summary["min"] <= summary["mean"] <= summary["max"] <= 1.0 - summary["floor"]
    assert 0.0 <= summary["clamped_fraction"] <= 1.0


def test_assumption_diagnostics_on_synthetic_and_real_data(benchmark):
    report = assumption_diagnostics(benchmark, window=3)
    assert report["consistency"]["mismatches"] == 0
    assert "by construction" in report["ignorability"]

    real = Benchmark({"kind": "real", "tau_max": TAU}, benchmark.splits, {})
    report = assumption_diagnostics(real, window=3)
    assert "consistency" not in report
    assert "untestable" in report["ignorability"]
