"""
Command-line interface: artifacts, manifests, config precedence and exit codes.
"""
import json

import pandas as pd
import pytest

from koss_ssm.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main, parse_args, parse_matrix, parse_matrix_list
from koss_ssm.errors import ConfigError

TINY_MODEL_FLAGS = ["--d-model", "4", "--d-state", "4", "--n-layers", "1", "--segment-len", "4"]
TINY_TRAIN_FLAGS = ["--steps", "2", "--eval-every", "1", "--batch-size", "2", "--dtype", "float64"]


def run(tmp_path, *argv):
    return main(list(argv) + ["--out-dir", str(tmp_path)])


def manifest(path):
    return json.loads(path.with_name(path.name + ".manifest.json").read_text())


def test_parse_matrix_forms(tmp_path):
    assert parse_matrix("1,0;0,2").tolist() == [[1.0, 0.0], [0.0, 2.0]]
    assert parse_matrix("[[1, 2]]").tolist() == [[1.0, 2.0]]
    assert parse_matrix("3").tolist() == [[3.0]]
    assert parse_matrix([[1, 0], [0, 1]]).shape == (2, 2)
    file = tmp_path / "a.json"
    file.write_text("[[0.5]]")
    assert parse_matrix(str(file)).tolist() == [[0.5]]
    with pytest.raises(ConfigError):
        parse_matrix("1,x")
    assert [m.tolist() for m in parse_matrix_list("[[[1]], [[2]]]")] == [[[1.0]], [[2.0]]]
    with pytest.raises(ConfigError):
        parse_matrix_list("not json")


def test_riccati_default_run(tmp_path):
    assert run(tmp_path, "riccati") == EXIT_OK
    table = pd.read_csv(tmp_path / "riccati.csv")
    assert len(table) == 5 * 2001
    record = manifest(tmp_path / "riccati.csv")
    assert record["command"] == "riccati"
    assert record["config"]["dt"] == 0.01


def test_riccati_output_is_deterministic(tmp_path):
    assert run(tmp_path, "riccati", "--t-end", "1", "--out", "one.csv") == EXIT_OK
    assert run(tmp_path, "riccati", "--t-end", "1", "--out", "two.csv", "--threads", "3") == EXIT_OK
    assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()


def test_riccati_bad_inputs(tmp_path):
    assert run(tmp_path, "riccati", "--t-end", "0") == EXIT_CONFIG
    assert run(tmp_path, "riccati", "--a", "1,x;0,1") == EXIT_CONFIG
    assert run(tmp_path, "riccati", "--bogus") == EXIT_CONFIG
    assert main([]) == EXIT_CONFIG


def test_riccati_divergence_is_numerical_failure(tmp_path):
    code = run(tmp_path, "riccati", "--a", "1", "--b", "0", "--q", "1", "--r", "1", "--p0", "[[[1]]]")
    assert code == EXIT_NUMERICAL


def test_config_file_sets_defaults_and_flags_win(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"dt": 0.02, "t-end": 1.0}))
    args = parse_args(["riccati", "--config", str(cfg), "--t-end", "0.5"])
    assert args.dt == 0.02
    assert args.t_end == 0.5
    assert run(tmp_path, "riccati", "--config", str(cfg), "--t-end", "0.5") == EXIT_OK
    assert len(pd.read_csv(tmp_path / "riccati.csv")) == 5 * 26


def test_config_file_errors(tmp_path):
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"dt": 0.02, "colour": "red"}))
    assert run(tmp_path, "riccati", "--config", str(unknown)) == EXIT_CONFIG
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert run(tmp_path, "riccati", "--config", str(broken)) == EXIT_CONFIG
    assert run(tmp_path, "riccati", "--config", str(tmp_path / "absent.json")) == EXIT_CONFIG


def test_sdu_response_with_trials(tmp_path):
    assert run(tmp_path, "sdu-response", "--trials", "3", "--seed", "4") == EXIT_OK
    frame = pd.read_csv(tmp_path / "sdu_response.csv")
    assert len(frame) == 512
    trials = pd.read_csv(tmp_path / "sdu_response_trials.csv")
    assert list(trials["seed"]) == [4, 5, 6]
    record = manifest(tmp_path / "sdu_response.csv")
    assert record["seed"] == 4
    assert str(tmp_path / "sdu_response_trials.csv") in record["outputs"]
    assert run(tmp_path, "sdu-response", "--freqs", "0.1,0.5", "--amplitudes", "1") == EXIT_CONFIG


def test_copying_gen(tmp_path):
    assert run(tmp_path, "copying", "gen", "--n", "3", "--seq-len", "32", "--ratio", "0.25") == EXIT_OK
    frame = pd.read_json(tmp_path / "copying.jsonl", lines=True)
    assert len(frame) == 3
    assert run(tmp_path, "copying", "gen", "--ratio", "0.9") == EXIT_CONFIG


def test_copying_train_eval_and_layer_bench(tmp_path):
    code = run(tmp_path, "copying", "train", "--seq-len", "16", "--n-data", "4", "--ratio", "0.5",
               *TINY_MODEL_FLAGS, *TINY_TRAIN_FLAGS)
    assert code == EXIT_OK
    ckpt = tmp_path / "copying.ckpt.json"
    history = pd.read_csv(tmp_path / "copying.ckpt.json.history.csv")
    assert list(history["epoch"]) == [1, 2]
    assert str(tmp_path / "copying.ckpt.json.history.csv") in manifest(ckpt)["outputs"]

    assert run(tmp_path, "copying", "eval", "--checkpoint", str(ckpt), "--n-sequences", "4") == EXIT_OK
    evaluation = pd.read_csv(tmp_path / "copying_eval.csv")
    assert list(evaluation["interference_ratio"]) == [0.0, 0.25, 0.5]

    code = run(tmp_path, "bench", "layer", "--checkpoint", str(ckpt), "--batch", "2", "--segment", "1,4,16",
               "--trials", "3", "--n-sequences", "4")
    assert code == EXIT_OK
    bench = pd.read_csv(tmp_path / "bench_layer.csv")
    assert list(bench["S"]) == [1, 4, 16]
    assert bench["accuracy"].between(0.0, 1.0).all()


def test_eval_rejects_wrong_checkpoint(tmp_path):
    assert run(tmp_path, "copying", "eval", "--checkpoint", str(tmp_path / "none.json")) == EXIT_CONFIG


def test_forecast_synth_train_eval(tmp_path):
    assert run(tmp_path, "forecast", "synth", "--length", "300", "--channels", "2") == EXIT_OK
    data = str(tmp_path / "sine.csv")
    code = run(tmp_path, "forecast", "train", "--data", data, "--has-timestamp", "--lookback", "16",
               "--horizon", "8", *TINY_MODEL_FLAGS, *TINY_TRAIN_FLAGS)
    assert code == EXIT_OK
    ckpt = str(tmp_path / "forecast.ckpt.json")
    assert run(tmp_path, "forecast", "eval", "--data", data, "--checkpoint", ckpt, "--split", "val") == EXIT_OK
    frame = pd.read_csv(tmp_path / "forecast_eval.csv")
    assert list(frame["model"]) == ["koss", "persistence"]
    assert set(frame["split"]) == {"val"}
    # a CSV is not a checkpoint
    assert run(tmp_path, "forecast", "eval", "--data", data, "--checkpoint", data) == EXIT_CONFIG


def test_bench_scan(tmp_path):
    code = run(tmp_path, "bench", "scan", "--len", "64", "--segment", "1,8,64", "--state-dim", "4", "--trials", "3")
    assert code == EXIT_OK
    frame = pd.read_csv(tmp_path / "bench_scan.csv")
    assert list(frame["S"]) == [1, 8, 64]
    assert (frame["max_abs_diff"] <= 1e-10).all()
    assert run(tmp_path, "bench", "scan", "--len", "64", "--segment", "128") == EXIT_CONFIG
    assert run(tmp_path, "bench", "scan", "--segment", "1,x") == EXIT_CONFIG
