"""
Desk-scale acceptance runs. Deselected by default; run with ``pytest -m slow``.
"""
import os
import statistics

import pytest

from koss_ssm.models.schemas import CopyingConfig, ForecastConfig, ModelConfig, TrainConfig
from koss_ssm.services import bench_scan
from koss_ssm.services.training_service import eval_copying, eval_forecast, prepare_forecast, train_copying, train_forecast
from koss_ssm.tasks.forecast import make_sine_dataset

pytestmark = pytest.mark.slow


def copying_accuracy(gain_input: str, seed: int) -> dict:
    model_cfg = ModelConfig(d_model=32, d_state=8, n_layers=2, segment_len=16, gain_input=gain_input)
    copy_cfg = CopyingConfig(seq_len=256, n_data_tokens=8, interference_ratio=0.3, seed=seed)
    train_cfg = TrainConfig(steps=20000, eval_every=1000, lr=1e-3, batch_size=32, seed=seed)
    result = train_copying(model_cfg, copy_cfg, train_cfg)
    frame = eval_copying(result.best_params, model_cfg, copy_cfg, ratios=(0.0, 0.3))
    return dict(zip(frame["interference_ratio"], frame["accuracy"]))


def test_innovation_gain_beats_input_only_ablation():
    full = [copying_accuracy("innovation", seed) for seed in range(3)]
    ablation = [copying_accuracy("input", seed) for seed in range(3)]
    assert statistics.median(run[0.0] for run in full) >= 0.90
    gap = statistics.median(run[0.3] for run in full) - statistics.median(run[0.3] for run in ablation)
    assert gap >= 0.10


def test_forecast_beats_persistence(tmp_path):
    data = make_sine_dataset(tmp_path / "sine.csv", length=8000, n_channels=4, seed=0)
    windows = prepare_forecast(data, ForecastConfig(lookback=96, horizon=96, has_timestamp=True))
    model_cfg = ModelConfig(d_model=16, d_state=8, n_layers=1, segment_len=16)
    result = train_forecast(windows, model_cfg, TrainConfig(steps=3000, eval_every=250, batch_size=32))
    frame = eval_forecast(result.best_params, windows, model_cfg).set_index("model")
    assert frame.loc["koss", "mse"] <= 0.7 * frame.loc["persistence", "mse"]


@pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="needs a host with at least four cores")
def test_throughput_grows_with_segment_length():
    frame = bench_scan(length=4096, segments=(1, 16, 256, 4096), n_state=8, trials=5,
                       threads=os.cpu_count()).set_index("S")
    assert frame.loc[4096, "tokens_per_s"] >= 3.0 * frame.loc[1, "tokens_per_s"]
    assert (frame["max_abs_diff"] <= 1e-9).all()
