"""
Forecasting pipeline: CSV loading, splits, normalisation, windows, SNR noise and the persistence baseline.
"""
import math

import numpy as np
import pandas as pd
import pytest

from koss_ssm.errors import ConfigError, DatasetError
from koss_ssm.models.schemas import ModelConfig
from koss_ssm.tasks.forecast import (ForecastWindows, NormStats, add_noise_snr, compute_stats, denormalize,
                                     load_csv_dataset, make_sine_dataset, normalize, persistence_forecast,
                                     split_points, windowize)
from koss_ssm.train.model import ForecastModel
from koss_ssm.utils.rng import make_rng


def write_frame(path, frame):
    frame.to_csv(path, index=False)
    return path


def ramp_csv(tmp_path, rows=100):
    t = np.arange(rows, dtype=float)
    return write_frame(tmp_path / "ramp.csv", pd.DataFrame({"a": t, "b": np.sin(t) + 2.0 * t}))


def test_split_points():
    assert split_points(100) == (70, 80)
    assert split_points(10) == (7, 8)
    with pytest.raises(ConfigError):
        split_points(100, (0.5, 0.5, 0.5))


def test_load_splits_and_train_only_stats(tmp_path):
    ds = load_csv_dataset(ramp_csv(tmp_path))
    assert ds.columns == ["a", "b"]
    assert (ds.train_end, ds.val_end) == (70, 80)
    assert ds.bounds("test") == (80, 100)
    np.testing.assert_allclose(ds.stats.mean[0], np.arange(70).mean())
    np.testing.assert_allclose(ds.stats.std[0], np.arange(70).std())
    np.testing.assert_allclose(ds.split("train").mean(axis=0), 0.0, atol=1e-12)
    assert ds.split("test", normalized=False)[0, 0] == 80.0
    with pytest.raises(ConfigError):
        ds.bounds("holdout")


def test_stats_example():
    stats = compute_stats(np.array([[1.0], [3.0]]))
    np.testing.assert_allclose(stats.mean, [2.0])
    np.testing.assert_allclose(stats.std, [1.0])
    np.testing.assert_allclose(normalize([[1.0], [3.0]], stats), [[-1.0], [1.0]])


def test_normalize_round_trip():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 3)) * [1.0, 10.0, 0.1] + [5.0, -2.0, 0.0]
    stats = compute_stats(x)
    np.testing.assert_allclose(denormalize(normalize(x, stats), stats), x, rtol=1e-12, atol=1e-12)
    with pytest.raises(ConfigError):
        normalize(x, NormStats(mean=np.zeros(3), std=np.array([1.0, 0.0, 1.0])))


def test_malformed_row_reports_file_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,4\nabc,5\n6,7\n")
    with pytest.raises(DatasetError) as err:
        load_csv_dataset(path)
    assert err.value.row == 4


def test_empty_and_missing_files(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DatasetError):
        load_csv_dataset(empty)
    header_only = tmp_path / "header.csv"
    header_only.write_text("a,b\n")
    with pytest.raises(DatasetError):
        load_csv_dataset(header_only)
    with pytest.raises(DatasetError):
        load_csv_dataset(tmp_path / "absent.csv")


def test_constant_training_column_rejected(tmp_path):
    frame = pd.DataFrame({"x": np.arange(20.0), "flat": np.ones(20)})
    with pytest.raises(DatasetError, match="flat"):
        load_csv_dataset(write_frame(tmp_path / "flat.csv", frame))


def test_too_few_rows(tmp_path):
    with pytest.raises(DatasetError):
        load_csv_dataset(write_frame(tmp_path / "tiny.csv", pd.DataFrame({"x": [1.0, 2.0, 3.0]})))


def test_timestamp_column_dropped(tmp_path):
    path = make_sine_dataset(tmp_path / "sine.csv", length=200, n_channels=3, seed=1)
    ds = load_csv_dataset(path, has_timestamp=True)
    assert ds.columns == ["ch0", "ch1", "ch2"]
    assert ds.values.shape == (200, 3)
    with pytest.raises(DatasetError):
        load_csv_dataset(path, has_timestamp=False)


def test_sine_dataset_is_seeded(tmp_path):
    first = pd.read_csv(make_sine_dataset(tmp_path / "one.csv", length=50, seed=3))
    second = pd.read_csv(make_sine_dataset(tmp_path / "two.csv", length=50, seed=3))
    pd.testing.assert_frame_equal(first, second)
    assert list(first.columns) == ["date", "ch0", "ch1", "ch2", "ch3"]
    with pytest.raises(ConfigError):
        make_sine_dataset(tmp_path / "bad.csv", length=5)


def test_windowize():
    series = np.arange(40.0).reshape(20, 2)
    inputs, targets = windowize(series, lookback=5, horizon=3)
    assert inputs.shape == (13, 5, 2)
    assert targets.shape == (13, 3, 2)
    np.testing.assert_array_equal(inputs[0, :, 0], [0, 2, 4, 6, 8])
    np.testing.assert_array_equal(targets[4, :, 1], [19, 21, 23])
    assert windowize(np.arange(8.0), 5, 3)[0].shape == (1, 5, 1)
    with pytest.raises(DatasetError):
        windowize(np.arange(7.0), 5, 3)
    with pytest.raises(ConfigError):
        windowize(np.arange(7.0), 0, 3)


def test_noise_hits_requested_snr():
    t = np.arange(20_000, dtype=float)
    x = np.stack([np.sin(0.05 * t), 3.0 * np.cos(0.01 * t)], axis=1)
    noisy = add_noise_snr(x, 33.0, seed=0)
    noise = noisy - x
    snr = 10.0 * np.log10(x.var(axis=0) / noise.var(axis=0))
    assert np.all(np.abs(snr - 33.0) <= 0.5)
    np.testing.assert_array_equal(add_noise_snr(x, 33.0, seed=0), noisy)


def test_noise_edge_cases():
    x = np.arange(10.0)
    np.testing.assert_array_equal(add_noise_snr(x, None, seed=0), x)
    np.testing.assert_array_equal(add_noise_snr(x, math.inf, seed=0), x)
    with pytest.raises(ConfigError):
        add_noise_snr(x, math.nan, seed=0)
    with pytest.raises(ConfigError):
        add_noise_snr(np.ones(10), 10.0, seed=0)


def test_persistence_forecast():
    inputs = np.arange(12.0).reshape(2, 3, 2)
    out = persistence_forecast(inputs, horizon=4)
    assert out.shape == (2, 4, 2)
    np.testing.assert_array_equal(out[1, :, 0], [10.0] * 4)


def test_forecast_windows(tmp_path):
    ds = load_csv_dataset(make_sine_dataset(tmp_path / "s.csv", length=400, n_channels=2), has_timestamp=True)
    windows = ForecastWindows(ds, lookback=24, horizon=12)
    assert windows.windows["train"][0].shape == (280 - 36 + 1, 24, 2)
    batch = windows.train_batch(np.random.default_rng(0), 7)
    assert batch["inputs"].shape == (7, 24, 2)
    assert batch["targets"].shape == (7, 12, 2)
    val = windows.val_batches(2)
    assert sum(len(b["inputs"]) for b in val) == 40 - 36 + 1


def test_untrained_temporal_map_is_persistence():
    model = ForecastModel(ModelConfig(d_model=4, d_state=4, n_layers=1, segment_len=8), n_channels=2,
                          lookback=16, horizon=5, dtype=np.float64)
    params = model.init_params(make_rng(0))
    inputs = np.random.default_rng(1).normal(size=(3, 16, 2))
    np.testing.assert_array_equal(model.predict(params, inputs), persistence_forecast(inputs, 5))
    with pytest.raises(ConfigError):
        model.predict(params, inputs[:, :10])
