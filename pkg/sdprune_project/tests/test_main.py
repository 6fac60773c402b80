import json
from unittest.mock import patch

import numpy as np
import pytest

from sdprune.core.seeding import derive_seed, make_rng
from sdprune.main import build_parser, main
from sdprune.schemas.result_schemas import Checkpoint
from sdprune.services.artifacts import read_csv_rows
from sdprune.services.datasets import Dataset, make_linear_regression

MOONS = {
    "model": {"kind": "mlp", "layer_sizes": [2, 4, 2], "activation": "relu", "loss": "softmax_cross_entropy"},
    "data": {"generator": "two_moons", "n_samples": 64},
    "run": {"epochs": 2, "batch_size": 16, "log_stride": 2},
}

REGRESSION = {
    "model": {"kind": "linear_regression", "layer_sizes": [20, 1], "bias": False},
    "data": {"generator": "linear_regression", "n_samples": 10, "in_dim": 20, "noise_std": 0.0},
    "partition": {"kind": "per_parameter"},
    "run": {"batch_size": 5},
}


def write_checkpoint(path, w):
    path.write_text(Checkpoint(optimizer="sgd", n=0, gamma=0.1, w=list(map(float, w))).model_dump_json(),
                    encoding="utf-8")
    return str(path)


@pytest.fixture
def planted(tmp_path):
    """Checkpoint at the interpolating solution of the REGRESSION config's training set."""
    fixture = make_linear_regression(make_rng(derive_seed(0, "data")), 10, 20)
    return write_checkpoint(tmp_path / "planted.json", fixture.w_true)


def test_parser_subcommands():
    parser = build_parser()
    args = parser.parse_args(["prune-exact", "--config", "c.json", "--checkpoint", "w.json", "--lambdas", "0,0.5"])
    assert args.lambdas == [0.0, 0.5]
    assert parser.parse_args(["contour", "--config", "c", "--w1", "a", "--w2", "b", "--w3", "c",
                              "--resolution", "5x7"]).resolution == (5, 7)
    with pytest.raises(SystemExit):
        parser.parse_args(["train"])


@pytest.mark.timeout(60)
def test_train_writes_deterministic_artifacts(tmp_path, write_config):
    config = write_config(MOONS)
    assert main(["train", "--config", config, "--out", str(tmp_path / "a")]) == 0
    assert main(["train", "--config", config, "--out", str(tmp_path / "b")]) == 0
    for name in ("trajectory.csv", "checkpoint.json", "report.json"):
        assert (tmp_path / "a" / name).exists()
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_train_overrides(tmp_path, write_config):
    config = write_config(MOONS)
    assert main(["train", "--config", config, "--out", str(tmp_path), "--set", "run.epochs=0", "--seed", "3"]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["steps"] == 0 and report["seed"] == 3


@pytest.mark.parametrize("extra", [["--set", "run.unknown=1"], ["--set", "optimizer.kind=altsdp"],
                                   ["--set", "run.batch_size=1000"], ["--set", "novalue"]])
def test_invalid_configuration_exits_2(tmp_path, write_config, extra):
    assert main(["train", "--config", write_config(MOONS), "--out", str(tmp_path)] + extra) == 2


def test_missing_or_broken_config_exits_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    assert main(["train", "--config", str(broken)]) == 2


@pytest.mark.timeout(60)
def test_prox_check_pass_and_fail(tmp_path):
    assert main(["prox-check", "--cases", "30", "--grid", "20001", "--out", str(tmp_path / "ok")]) == 0
    summary = json.loads((tmp_path / "ok" / "prox_summary.json").read_text())
    assert summary["passed"] and summary["n_cases"] == 30
    assert len(read_csv_rows(tmp_path / "ok" / "prox_check.csv")) == 30
    assert main(["prox-check", "--cases", "30", "--grid", "2001", "--tol", "0", "--out", str(tmp_path / "bad")]) == 1


@pytest.mark.timeout(60)
def test_prox_summary_carries_csv_config_hash(tmp_path):
    assert main(["prox-check", "--cases", "5", "--grid", "20001", "--seed", "3", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "prox_summary.json").read_text())
    first = (tmp_path / "prox_check.csv").read_text().splitlines()[0]
    assert summary["config_hash"]
    assert first == f"# config_hash={summary['config_hash']}, seed=3"


@pytest.mark.timeout(60)
def test_prune_exact_on_planted_solution(tmp_path, write_config, planted):
    out = tmp_path / "prune"
    assert main(["prune-exact", "--config", write_config(REGRESSION), "--checkpoint", planted, "--out", str(out)]) == 0
    summary = json.loads((out / "prune_summary.json").read_text())
    assert summary["d"] == 20 and summary["k_flat"] == 10
    assert summary["warnings"] == []
    rows = read_csv_rows(out / "flatness.csv")
    assert len(rows) == 13
    assert max(abs(float(r[1])) for r in rows) <= 1e-8
    assert len(read_csv_rows(out / "spectrum.csv")) == 20
    assert (out / "prune_0.0.json").exists()


def test_prune_exact_zero_lambda_is_identity(tmp_path, write_config, planted):
    out = tmp_path / "zero"
    assert main(["prune-exact", "--config", write_config(REGRESSION), "--checkpoint", planted,
                 "--lambdas", "0", "--out", str(out)]) == 0
    record = json.loads((out / "prune_0.0.json").read_text())
    expected = json.loads(open(planted, encoding="utf-8").read())["w"]
    assert record["w_pruned"] == expected
    rows = read_csv_rows(out / "flatness.csv")
    assert len(rows) == 1 and float(rows[0][1]) == 0.0


def test_prune_exact_dimension_mismatch_exits_2(tmp_path, write_config):
    bad = write_checkpoint(tmp_path / "bad.json", np.ones(7))
    assert main(["prune-exact", "--config", write_config(REGRESSION), "--checkpoint", bad,
                 "--out", str(tmp_path)]) == 2
    assert main(["prune-exact", "--config", write_config(REGRESSION), "--checkpoint", str(tmp_path / "none.json"),
                 "--out", str(tmp_path)]) == 2


def test_connect_identical_minima(tmp_path, write_config, planted):
    config = write_config({**REGRESSION, "bezier": {"epochs": 2, "batch_size": 5}})
    assert main(["connect", "--config", config, "--checkpoint-a", planted, "--checkpoint-b", planted,
                 "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "curve_summary.json").read_text())
    assert abs(summary["margin"]) <= 1e-12
    assert len(read_csv_rows(tmp_path / "curve.csv")) == 101


def test_contour_grid(tmp_path, write_config, planted):
    config = write_config(REGRESSION)
    rng = make_rng(99)
    other = [write_checkpoint(tmp_path / f"w{k}.json", rng.standard_normal(20)) for k in (2, 3)]
    args = ["contour", "--config", config, "--w1", planted, "--w2", other[0], "--w3", other[1], "--resolution", "3x3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert len(read_csv_rows(tmp_path / "a" / "grid.csv")) == 9
    anchors = read_csv_rows(tmp_path / "a" / "anchors.csv")
    assert [r[0] for r in anchors] == ["w1", "w2", "w3"]
    assert (tmp_path / "a" / "grid.csv").read_bytes() == (tmp_path / "b" / "grid.csv").read_bytes()


def test_theory_zero_tuning_passes(tmp_path, write_config):
    config = write_config({
        "model": {"kind": "linear_regression", "layer_sizes": [6, 1], "bias": False},
        "data": {"generator": "linear_regression", "n_samples": 3, "in_dim": 6, "noise_std": 0.0},
        "partition": {"kind": "per_parameter"},
        "run": {"batch_size": 3},
        "theory": {"which": "thm2", "gammas": [0.01, 0.005], "c": 0.0, "t_end": 1.0},
    })
    assert main(["theory", "--config", config, "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "theory_summary.json").read_text())
    assert summary["verdict"] and summary["final_residuals"]["0"] == [0.0, 0.0]
    assert (tmp_path / "residuals_0.01.csv").exists() and (tmp_path / "residuals_0.005.csv").exists()


def test_theory_sign_crossing_exits_4(tmp_path, write_config):
    config = write_config({
        "model": {"kind": "linear_regression", "layer_sizes": [2, 1], "bias": False},
        "partition": {"kind": "per_parameter"},
        "theory": {"which": "thm3", "gammas": [1e-3], "c": 1.0, "t_end": 2.0, "check_stride": False},
    })
    crossing = (Dataset([[1.0, 0.0]], [-3.0]), np.array([2.0, 1.0]))
    with patch("sdprune.commands.experiment_commands.theory_fixture", return_value=crossing):
        assert main(["theory", "--config", config, "--out", str(tmp_path)]) == 4
