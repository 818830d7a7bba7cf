"""End-to-end tests of the command-line surface."""

import json
from pathlib import Path

import pandas as pd
import pytest
import yaml

from msct.cli import build_parser, load_run_config, main
from msct.dgp.benchmark import load_benchmark
from msct.models import RESERVED_MODELS

SMALL_RUN = {
    "seed": 1,
    "dgp": {"seq_len": 12, "tau_max": 3, "crash_percentile": 75.0, "sizes": {"train": 8, "val": 3, "test": 2}},
    "model": {"d_h": 8, "heads": 2},
    "train": {"epochs": 1, "batch_size": 8, "decoder_anchors_per_unit": 1},
    "eval": {"seeds": [0], "models": ["naive", "msm", "msct"], "anchor_stride": 3},
    "sweep": {"omegas": [1, 3], "crash_ratios": [0.0, 0.5]},
}


def _config(tmp_path, payload=None, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(payload if payload is not None else SMALL_RUN))
    return str(path)


def _generate(tmp_path):
    data = tmp_path / "data"
    assert main(["generate", "--config", _config(tmp_path), "--out", str(data)]) == 0
    return data


def test_unknown_config_key_exits_with_code_two(tmp_path):
    path = _config(tmp_path, {"dgp": {"omgea": 3}})
    assert main(["generate", "--config", path, "--out", str(tmp_path / "d")]) == 2


def test_invalid_field_value_exits_with_code_two(tmp_path):
    assert main(["generate", "--config", _config(tmp_path, {"train": {"lr": -1.0}})]) == 2
    assert main(["generate", "--config", _config(tmp_path, {"dgp": {"p_c": [0.5, 0.6]}}), "--out", str(tmp_path / "d")]) == 2


def test_missing_dataset_directory(tmp_path):
    assert main(["train"]) == 2
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]) == 1


def test_flags_override_the_config_file(tmp_path):
    args = build_parser().parse_args(
        ["evaluate", "--config", _config(tmp_path), "--seed", "7", "--model", "msm", "--omega", "3", "--jobs", "2"]
    )
    run = load_run_config(args)
    assert run.seed == 7 and run.jobs == 2
    assert run.model.name == "msm" and run.eval.models == ["msm"]
    assert run.dgp.omega == 3
    assert run.dgp.sizes.train == 8


def test_generate_writes_dataset_and_provenance(tmp_path):
    data = _generate(tmp_path)
    benchmark = load_benchmark(data)
    assert {k: len(v) for k, v in benchmark.splits.items()} == {"train": 8, "val": 3, "test": 2}
    resolved = yaml.safe_load((data / "resolved_config.yaml").read_text())
    assert resolved["seed"] == 1 and resolved["dgp"]["seq_len"] == 12
    metadata = json.loads((data / "metadata.json").read_text())
    assert metadata["command"] == "generate"
    assert "generate" in metadata["timings"]
    assert metadata["duration_seconds"] >= 0


def test_train_then_evaluate_reuses_checkpoints(tmp_path):
    data = _generate(tmp_path)
    out = tmp_path / "runs"
    config = _config(tmp_path)
    assert main(["train", "--config", config, "--data", str(data), "--out", str(out), "--model", "msm"]) == 0
    checkpoint = out / "checkpoints" / "msm_seed1_model.json"
    assert checkpoint.exists()

    assert main(["evaluate", "--config", config, "--data", str(data), "--out", str(out)]) == 0
    reports = out / "reports"
    table = pd.read_csv(reports / "evaluation.csv")
    assert set(table["model"]) == {"naive", "msm", "msct", *RESERVED_MODELS}
    assert (reports / "evaluation_rmse.csv").exists() and (reports / "evaluation_crmse.csv").exists()
    assert sorted(pd.read_csv(reports / "summary.csv")["model"]) == ["msct", "msm", "naive"]
    diagnostics = json.loads((reports / "diagnostics.json").read_text())
    assert set(diagnostics["awareness"]) == {"naive", "msm", "msct"}
    assert set(diagnostics["probe"]) == {"msct"}
    assert diagnostics["assumptions"]["consistency"]["mismatches"] == 0
    assert (out / "plots" / "msct_response_curves.json").exists()
    assert (out / "checkpoints" / "msct_seed0_model.ckpt").exists()
    assert (out / "logs" / "msct_seed0_train.jsonl").exists()


def test_omega_sweep_command(tmp_path):
    payload = {**SMALL_RUN, "eval": {"seeds": [0], "models": ["naive"]}}
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", _config(tmp_path, payload), "--out", str(out)]) == 0
    assert set(pd.read_csv(out / "omega_sweep.csv")["axis_value"]) == {1, 3}
    assert (out / "resolved_config.yaml").exists()


def test_ingest_command(tmp_path):
    from test_ingest import _detector_frame

    csv = tmp_path / "detectors.csv"
    _detector_frame().to_csv(csv, index=False)
    out = tmp_path / "real"
    payload = {"ingest": {"window": 60, "stride": 60}}
    assert main(["ingest", "--config", _config(tmp_path, payload), "--csv", str(csv), "--out", str(out)]) == 0
    assert load_benchmark(out).kind == "real"
    assert (out / "resolved_config.yaml").exists()
    assert main(["ingest", "--out", str(out)]) == 2


@pytest.mark.slow
def test_desk_scale_reproduction(tmp_path):
    desk = Path(__file__).parent / "config" / "runs" / "desk.yaml"
    data, out = tmp_path / "desk_data", tmp_path / "desk_runs"
    assert main(["generate", "--config", str(desk), "--out", str(data)]) == 0
    assert main(["evaluate", "--config", str(desk), "--data", str(data), "--out", str(out)]) == 0
    table = pd.read_csv(out / "reports" / "evaluation_rmse.csv", index_col=0)
    assert table.loc["msct"].notna().all()
    assert main(["ablate", "--config", str(desk), "--data", str(data), "--out", str(tmp_path / "ablate")]) == 0
    assert (tmp_path / "ablate" / "ablation_rmse.csv").exists()
