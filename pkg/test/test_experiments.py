"""
Experiment runners: Riccati convergence, SDU response, benchmarks and the task train/eval services.
"""
import numpy as np
import pandas as pd
import pytest

from koss_ssm.core.layer import init_params
from koss_ssm.errors import ConfigError
from koss_ssm.models.schemas import CopyingConfig, ForecastConfig, ModelConfig, TrainConfig
from koss_ssm.services import bench_layer, bench_scan, run_riccati, sdu_response, sdu_trials
from koss_ssm.services.experiment_service import response_signal, top_quartile_energy
from koss_ssm.services.training_service import (copying_accuracy_at, copying_model, eval_copying, eval_forecast,
                                                load_task_checkpoint, prepare_forecast, save_copying, save_forecast,
                                                train_copying, train_forecast)
from koss_ssm.tasks.forecast import make_sine_dataset, persistence_forecast
from koss_ssm.train.losses import mse
from koss_ssm.utils.rng import make_rng

TINY_MODEL = ModelConfig(d_model=4, d_state=4, n_layers=1, segment_len=4)
TINY_TRAIN = TrainConfig(steps=2, eval_every=1, batch_size=2, dtype="float64", val_batches=1)


def test_run_riccati_short_horizon():
    table, summary = run_riccati(t_end=2.0)
    assert len(table) == 5 * 201
    assert len(summary["per_init"]) == 5
    assert len(summary["k_inf"]) == 2
    assert summary["max_abs_error"] == max(r["max_abs_error"] for r in summary["per_init"])


def test_response_signal_checks_arguments():
    with pytest.raises(ConfigError):
        response_signal(freqs=(0.1, 0.5), amplitudes=(1.0,))
    with pytest.raises(ConfigError):
        response_signal(noise_std=-1.0)
    np.testing.assert_array_equal(response_signal(seed=1), response_signal(seed=1))


def test_sdu_response_peaks_at_test_tones():
    frame = sdu_response(noise_std=0.0)
    assert list(frame.columns) == ["bin_index", "omega", "mag_sdu", "mag_finite_diff"]
    assert len(frame) == 512
    positive = frame[frame["omega"] > 0]
    top = positive.nlargest(3, "mag_sdu")["bin_index"]
    assert set(top) == {2, 10, 20}


def test_sdu_response_is_reproducible():
    pd.testing.assert_frame_equal(sdu_response(seed=3), sdu_response(seed=3))


def test_sdu_suppresses_high_band_noise():
    trials = sdu_trials(n_trials=100)
    assert len(trials) == 100
    assert list(trials["seed"]) == list(range(100))
    assert int(trials["sdu_lower"].sum()) >= 95
    energy = top_quartile_energy(sdu_response(seed=0))
    assert energy["sdu"] < energy["finite_diff"]
    with pytest.raises(ConfigError):
        sdu_trials(n_trials=0)


def test_bench_scan_small():
    frame = bench_scan(length=64, segments=(1, 8, 64), n_state=4, trials=3)
    assert list(frame["S"]) == [1, 8, 64]
    assert list(frame.columns) == ["S", "median_ms", "tokens_per_s", "speedup_vs_sequential", "max_abs_diff"]
    assert (frame["max_abs_diff"] <= 1e-10).all()
    assert (frame["tokens_per_s"] > 0).all()


def test_bench_scan_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        bench_scan(length=16, segments=(4,), trials=2)
    with pytest.raises(ConfigError):
        bench_scan(length=16, segments=(0, 4), trials=3)
    with pytest.raises(ConfigError):
        bench_scan(length=16, segments=(32,), trials=3)


def test_bench_layer_small():
    cfg = ModelConfig(d_model=3, d_state=4, n_layers=1)
    params = init_params(cfg, make_rng(0))
    x = np.random.default_rng(0).normal(size=(2, 32, 3))
    frame = bench_layer(params, x, segments=(1, 8, 32), trials=3, accuracy=lambda s: 1.0 / s)
    assert list(frame.columns) == ["S", "median_ms", "tokens_per_s", "accuracy"]
    np.testing.assert_allclose(frame["accuracy"], [1.0, 1.0 / 8, 1.0 / 32])
    assert "accuracy" not in bench_layer(params, x, segments=(32,), trials=3).columns


def test_copying_train_save_and_eval(tmp_path):
    copy_cfg = CopyingConfig(seq_len=16, n_data_tokens=4, interference_ratio=0.5)
    rows = []
    result = train_copying(TINY_MODEL, copy_cfg, TINY_TRAIN, on_epoch=rows.append)
    assert len(rows) == 2
    path = save_copying(tmp_path / "copy.json", result, TINY_MODEL, copy_cfg, TINY_TRAIN)
    params, meta = load_task_checkpoint(path, "copying")
    assert meta["best_epoch"] == result.best_epoch
    assert ModelConfig(**meta["model"]) == TINY_MODEL
    assert CopyingConfig(**meta["copying"]) == copy_cfg
    with pytest.raises(ConfigError):
        load_task_checkpoint(path, "forecast")

    frame = eval_copying(params, TINY_MODEL, copy_cfg, ratios=(0.0, 0.5), n_sequences=6, batch_size=4)
    assert list(frame["interference_ratio"]) == [0.0, 0.5]
    assert frame["accuracy"].between(0.0, 1.0).all()
    accuracy = copying_accuracy_at(params, TINY_MODEL, copy_cfg, n_sequences=4)
    assert 0.0 <= accuracy(1) <= 1.0


def test_copying_eval_is_deterministic():
    copy_cfg = CopyingConfig(seq_len=16, n_data_tokens=4)
    params = copying_model(TINY_MODEL, copy_cfg).init_params(make_rng(0))
    first = eval_copying(params, TINY_MODEL, copy_cfg, ratios=(0.25,), n_sequences=4)
    second = eval_copying(params, TINY_MODEL, copy_cfg, ratios=(0.25,), n_sequences=4)
    pd.testing.assert_frame_equal(first, second)


def test_forecast_train_save_and_eval(tmp_path):
    data = make_sine_dataset(tmp_path / "sine.csv", length=300, n_channels=2, seed=0)
    fcfg = ForecastConfig(lookback=16, horizon=8, has_timestamp=True)
    windows = prepare_forecast(data, fcfg)
    result = train_forecast(windows, TINY_MODEL, TINY_TRAIN)
    path = save_forecast(tmp_path / "fc.json", result, TINY_MODEL, fcfg, TINY_TRAIN, windows)
    params, meta = load_task_checkpoint(path, "forecast")
    assert meta["columns"] == ["ch0", "ch1"]

    frame = eval_forecast(params, windows, TINY_MODEL, split="test")
    assert list(frame["model"]) == ["koss", "persistence"]
    inputs, targets = windows.windows["test"]
    baseline = frame.set_index("model").loc["persistence"]
    assert baseline["mse_norm"] == pytest.approx(mse(persistence_forecast(inputs, 8), targets))
    assert (frame["mse"] > 0).all()


def test_forecast_noise_changes_data_and_stats(tmp_path):
    data = make_sine_dataset(tmp_path / "sine.csv", length=300, n_channels=2, seed=0)
    clean = prepare_forecast(data, ForecastConfig(lookback=16, horizon=8, has_timestamp=True))
    noisy = prepare_forecast(data, ForecastConfig(lookback=16, horizon=8, has_timestamp=True, snr_db=10.0))
    assert not np.array_equal(clean.dataset.values, noisy.dataset.values)
    assert np.all(noisy.dataset.stats.std > clean.dataset.stats.std)
