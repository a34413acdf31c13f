"""
Command-line interface: theory reproductions, task training/evaluation and benchmarks.

Every command writes CSV (or JSON) artifacts under ``--out-dir`` together with
a ``<output>.manifest.json`` sidecar. Exit codes: 0 success, 2 usage or
configuration error, 3 numerical failure.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from koss_ssm import config
from koss_ssm.core.kalman import RiccatiSystem
from koss_ssm.core.layer import KossParams, init_params
from koss_ssm.errors import ConfigError, NumericalError
from koss_ssm.models.schemas import CopyingConfig, ForecastConfig, ModelConfig, TrainConfig
from koss_ssm.services.bench_service import bench_layer, bench_scan
from koss_ssm.services.experiment_service import run_riccati, sdu_response, sdu_trials, top_quartile_energy
from koss_ssm.services.training_service import (copying_accuracy_at, eval_copying, eval_forecast,
                                                load_task_checkpoint, prepare_forecast, save_copying,
                                                save_forecast, train_copying, train_forecast)
from koss_ssm.tasks.copying import export_copying_jsonl, gen_copying_batch
from koss_ssm.tasks.forecast import make_sine_dataset
from koss_ssm.train.loop import history_table
from koss_ssm.train.model import block_params
from koss_ssm.utils.artifacts import start_manifest, write_csv, write_manifest
from koss_ssm.utils.logging import logger, set_level
from koss_ssm.utils.rng import STREAM_BENCH, make_rng

console = Console()

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


# ---------------------------------------------------------------------------
# flag parsing helpers


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def parse_matrix(value: Any) -> np.ndarray:
    """
    Matrix from a JSON file path, a JSON nested list or "1,0;0,1" rows.

    Lists coming from a --config file are accepted as they are.
    """
    if isinstance(value, (list, tuple)):
        return np.atleast_2d(np.asarray(value, dtype=float))
    text = str(value).strip()
    if Path(text).is_file():
        text = Path(text).read_text(encoding="utf-8")
    try:
        if text.startswith("["):
            return np.atleast_2d(np.asarray(json.loads(text), dtype=float))
        return np.atleast_2d(np.array([[float(v) for v in row.split(",")] for row in text.split(";")]))
    except (ValueError, TypeError) as e:
        raise ConfigError(f"cannot parse matrix '{value}': {e}")


def parse_matrix_list(value: Any) -> List[np.ndarray]:
    if isinstance(value, (list, tuple)):
        items = value
    else:
        text = str(value).strip()
        if Path(text).is_file():
            text = Path(text).read_text(encoding="utf-8")
        try:
            items = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"--p0 must be a JSON list of matrices: {e}")
    if not isinstance(items, list):
        raise ConfigError("--p0 must be a JSON list of matrices")
    return [parse_matrix(item) for item in items]


def _load_config_file(path: str) -> Dict[str, Any]:
    file = Path(path)
    if not file.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        values = json.loads(file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}")
    if not isinstance(values, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return {key.replace("-", "_"): value for key, value in values.items()}


def _output(args, default: str) -> Path:
    return Path(args.out_dir) / (args.out or default)


def _snapshot(args) -> Dict[str, Any]:
    return {k: v for k, v in vars(args).items() if not k.startswith("_")}


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        d_model=args.d_model, d_state=args.d_state, n_layers=args.n_layers, segment_len=args.segment_len,
        gain_scale=args.gain_scale, gain_input=args.gain_input, use_sdu=not args.no_sdu, mask_kind=args.mask,
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(steps=args.steps, eval_every=args.eval_every, lr=args.lr, batch_size=args.batch_size,
                       seed=args.seed, dtype=args.dtype)


def _copying_config(args) -> CopyingConfig:
    return CopyingConfig(seq_len=args.seq_len, vocab_size=args.vocab_size, n_data_tokens=args.n_data,
                         interference_ratio=args.ratio, seed=args.seed)


def _print_frame(frame: pd.DataFrame, title: str, limit: int = 20):
    table = Table(title=title)
    for col in frame.columns:
        table.add_column(str(col), justify="right")
    for row in frame.head(limit).itertuples(index=False):
        table.add_row(*[f"{v:.6g}" if isinstance(v, (float, np.floating)) else str(v) for v in row])
    console.print(table)


def _write_history(result, checkpoint: Path, manifest) -> Path:
    path = checkpoint.with_name(checkpoint.name + ".history.csv")
    write_csv(pd.DataFrame(history_table(result.history)), path)
    manifest.outputs.append(str(path))
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_riccati(args) -> int:
    default = RiccatiSystem.default()
    system = RiccatiSystem(
        a=parse_matrix(args.a) if args.a is not None else default.a,
        b=parse_matrix(args.b) if args.b is not None else default.b,
        q=parse_matrix(args.q) if args.q is not None else default.q,
        r=parse_matrix(args.r) if args.r is not None else default.r,
        p0=parse_matrix_list(args.p0) if args.p0 is not None else default.p0,
    )
    manifest = start_manifest("riccati", _snapshot(args))
    table, summary = run_riccati(system, dt=args.dt, t_end=args.t_end, workers=args.threads)
    out = write_csv(table, _output(args, "riccati.csv"))
    write_manifest(manifest, out)

    result = Table(title=f"Gain convergence (K_inf = {np.round(summary['k_inf'], 6).tolist()})")
    for col in ("init", "final gain", "max |K - K_inf|", "terminal |dK/dt|"):
        result.add_column(col, justify="right")
    for row in summary["per_init"]:
        result.add_row(str(row["init_id"]), str(np.round(row["final_gain"], 6).tolist()),
                       f"{row['max_abs_error']:.3e}", f"{row['terminal_rate']:.3e}")
    console.print(result)
    return EXIT_OK


def cmd_sdu_response(args) -> int:
    if len(args.freqs) != len(args.amplitudes):
        raise ConfigError(f"{len(args.freqs)} frequencies but {len(args.amplitudes)} amplitudes")
    manifest = start_manifest("sdu-response", _snapshot(args), seed=args.seed)
    frame = sdu_response(seed=args.seed, noise_std=args.noise_std, omega_cut=args.omega_cut, mask_kind=args.mask,
                         n=args.n, dt=args.dt, freqs=args.freqs, amplitudes=args.amplitudes)
    out = write_csv(frame, _output(args, "sdu_response.csv"))
    energy = top_quartile_energy(frame)
    console.print(f"top-quartile magnitude: SDU {energy['sdu']:.4g}, central difference {energy['finite_diff']:.4g}")
    if args.trials > 0:
        trials = sdu_trials(args.trials, first_seed=args.seed, noise_std=args.noise_std,
                            omega_cut=args.omega_cut, mask_kind=args.mask)
        trials_out = write_csv(trials, out.with_name(out.stem + "_trials.csv"))
        manifest.outputs.append(str(trials_out))
        console.print(f"SDU lower in {int(trials['sdu_lower'].sum())}/{len(trials)} trials")
    write_manifest(manifest, out)
    return EXIT_OK


def cmd_copying_gen(args) -> int:
    cfg = _copying_config(args)
    manifest = start_manifest("copying gen", _snapshot(args), seed=args.seed)
    out = export_copying_jsonl(_output(args, "copying.jsonl"), cfg, args.n)
    write_manifest(manifest, out)
    return EXIT_OK


def cmd_copying_train(args) -> int:
    model_cfg, copy_cfg, train_cfg = _model_config(args), _copying_config(args), _train_config(args)
    manifest = start_manifest("copying train", _snapshot(args), seed=args.seed)
    result = train_copying(model_cfg, copy_cfg, train_cfg)
    out = save_copying(_output(args, "copying.ckpt.json"), result, model_cfg, copy_cfg, train_cfg)
    _write_history(result, out, manifest)
    write_manifest(manifest, out)
    console.print(f"best validation loss {result.best_val_loss:.5f} at epoch {result.best_epoch}")
    return EXIT_OK


def cmd_copying_eval(args) -> int:
    params, meta = load_task_checkpoint(Path(args.out_dir) / args.checkpoint, "copying")
    model_cfg, copy_cfg = ModelConfig(**meta["model"]), CopyingConfig(**meta["copying"])
    manifest = start_manifest("copying eval", _snapshot(args))
    frame = eval_copying(params, model_cfg, copy_cfg, ratios=args.ratios, n_sequences=args.n_sequences)
    out = write_csv(frame, _output(args, "copying_eval.csv"))
    write_manifest(manifest, out)
    _print_frame(frame, "Copying accuracy by interference ratio")
    return EXIT_OK


def cmd_forecast_synth(args) -> int:
    manifest = start_manifest("forecast synth", _snapshot(args), seed=args.seed)
    out = make_sine_dataset(_output(args, "sine.csv"), length=args.length, n_channels=args.channels,
                            seed=args.seed, noise_std=args.noise_std)
    write_manifest(manifest, out)
    return EXIT_OK


def _forecast_config(args) -> ForecastConfig:
    return ForecastConfig(lookback=args.lookback, horizon=args.horizon, has_timestamp=args.has_timestamp,
                          snr_db=args.snr_db, noise_seed=args.noise_seed)


def cmd_forecast_train(args) -> int:
    model_cfg, fcfg, train_cfg = _model_config(args), _forecast_config(args), _train_config(args)
    manifest = start_manifest("forecast train", _snapshot(args), seed=args.seed)
    windows = prepare_forecast(args.data, fcfg)
    result = train_forecast(windows, model_cfg, train_cfg)
    out = save_forecast(_output(args, "forecast.ckpt.json"), result, model_cfg, fcfg, train_cfg, windows)
    _write_history(result, out, manifest)
    write_manifest(manifest, out)
    console.print(f"best validation loss {result.best_val_loss:.5f} at epoch {result.best_epoch}")
    return EXIT_OK


def cmd_forecast_eval(args) -> int:
    params, meta = load_task_checkpoint(Path(args.out_dir) / args.checkpoint, "forecast")
    model_cfg, fcfg = ModelConfig(**meta["model"]), ForecastConfig(**meta["forecast"])
    manifest = start_manifest("forecast eval", _snapshot(args))
    windows = prepare_forecast(args.data, fcfg)
    frame = eval_forecast(params, windows, model_cfg, split=args.split)
    out = write_csv(frame, _output(args, "forecast_eval.csv"))
    write_manifest(manifest, out)
    _print_frame(frame, f"Forecast metrics ({args.split} split)")
    return EXIT_OK


def cmd_bench_scan(args) -> int:
    manifest = start_manifest("bench scan", _snapshot(args), seed=args.seed)
    frame = bench_scan(length=args.len, segments=args.segment, n_state=args.state_dim, trials=args.trials,
                       threads=args.threads, seed=args.seed)
    out = write_csv(frame, _output(args, "bench_scan.csv"))
    write_manifest(manifest, out)
    _print_frame(frame, f"Segment scan, L={args.len}, N={args.state_dim}")
    return EXIT_OK


def cmd_bench_layer(args) -> int:
    manifest = start_manifest("bench layer", _snapshot(args), seed=args.seed)
    rng = make_rng(args.seed, STREAM_BENCH)
    accuracy = None
    if args.checkpoint:
        params, meta = load_task_checkpoint(Path(args.out_dir) / args.checkpoint, "copying")
        model_cfg, copy_cfg = ModelConfig(**meta["model"]), CopyingConfig(**meta["copying"])
        layer = KossParams.from_tensors(model_cfg, block_params(params, 0))
        tokens = gen_copying_batch(copy_cfg, args.batch, stream=STREAM_BENCH)["tokens"]
        x = params["embed"][tokens]
        accuracy = copying_accuracy_at(params, model_cfg, copy_cfg, n_sequences=args.n_sequences)
    else:
        model_cfg = _model_config(args)
        layer = init_params(model_cfg, rng)
        x = rng.normal(size=(args.batch, args.len, model_cfg.d_model))
    frame = bench_layer(layer, x, args.segment, trials=args.trials, threads=args.threads, accuracy=accuracy)
    out = write_csv(frame, _output(args, "bench_layer.csv"))
    write_manifest(manifest, out)
    _print_frame(frame, f"KOSS layer, B={x.shape[0]}, L={x.shape[1]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="JSON file with flag defaults")
    common.add_argument("--out-dir", type=str, default=config.OUT_DIR, help=f"output directory (default: {config.OUT_DIR})")
    common.add_argument("--out", type=str, default=None, help="output file name inside --out-dir")
    common.add_argument("--threads", type=int, default=config.THREADS, help="work-pool size")
    common.add_argument("--log-level", type=str, default=None, help="override KOSS_LOG_LEVEL")
    return common


def _add_model_flags(p: argparse.ArgumentParser, d_model: int = 32, n_layers: int = 2):
    p.add_argument("--d-model", type=int, default=d_model)
    p.add_argument("--d-state", type=int, default=8)
    p.add_argument("--n-layers", type=int, default=n_layers)
    p.add_argument("--segment-len", type=int, default=config.DEFAULT_SEGMENT_LEN)
    p.add_argument("--gain-scale", type=float, default=0.5)
    p.add_argument("--gain-input", choices=["innovation", "input"], default="innovation",
                   help="feed the gain network the innovation or the raw input")
    p.add_argument("--no-sdu", action="store_true", help="drop the K * dx term")
    p.add_argument("--mask", choices=["soft", "hard", "none"], default="soft")


def _add_train_flags(p: argparse.ArgumentParser, steps: int = 2000):
    p.add_argument("--steps", type=int, default=steps)
    p.add_argument("--eval-every", type=int, default=200)
    p.add_argument("--lr", type=float, default=config.DEFAULT_LR)
    p.add_argument("--batch-size", type=int, default=config.DEFAULT_BATCH_SIZE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")


def _add_copying_flags(p: argparse.ArgumentParser, with_seed: bool = False):
    p.add_argument("--seq-len", type=int, default=256)
    p.add_argument("--vocab-size", type=int, default=16)
    p.add_argument("--n-data", type=int, default=8)
    p.add_argument("--ratio", type=float, default=0.0, help="interference ratio in [0, 0.5]")
    if with_seed:
        p.add_argument("--seed", type=int, default=0)


def _add_forecast_flags(p: argparse.ArgumentParser):
    p.add_argument("--data", type=str, required=True, help="CSV dataset")
    p.add_argument("--has-timestamp", action="store_true", help="skip the first column")
    p.add_argument("--lookback", type=int, default=96)
    p.add_argument("--horizon", type=int, default=96)
    p.add_argument("--snr-db", type=float, default=None, help="inject Gaussian noise at this SNR")
    p.add_argument("--noise-seed", type=int, default=0)


def _leaf(subparsers, name: str, handler, common, help_text: str) -> argparse.ArgumentParser:
    p = subparsers.add_parser(name, parents=[common], help=help_text)
    p.set_defaults(_handler=handler, _parser=p)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="koss", description="KOSS layer experiments and benchmarks")
    commands = parser.add_subparsers(dest="command", required=True)

    p = _leaf(commands, "riccati", cmd_riccati, common, "Kalman gain convergence to the CARE solution")
    p.add_argument("--a", default=None, help='A as "r0c0,r0c1;r1c0,r1c1", JSON or a JSON file')
    p.add_argument("--b", default=None)
    p.add_argument("--q", default=None)
    p.add_argument("--r", default=None)
    p.add_argument("--p0", default=None, help="JSON list of initial covariances (or a JSON file)")
    p.add_argument("--dt", type=float, default=config.RICCATI_DT)
    p.add_argument("--t-end", type=float, default=config.RICCATI_T_END)

    p = _leaf(commands, "sdu-response", cmd_sdu_response, common, "SDU vs central-difference derivative spectra")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--omega-cut", type=float, default=config.SDU_OMEGA_CUT)
    p.add_argument("--mask", choices=["soft", "hard", "none"], default="soft")
    p.add_argument("--n", type=int, default=config.SDU_N)
    p.add_argument("--dt", type=float, default=config.SDU_DT)
    p.add_argument("--freqs", type=_float_list, default=list(config.SDU_FREQS))
    p.add_argument("--amplitudes", type=_float_list, default=list(config.SDU_AMPLITUDES))
    p.add_argument("--trials", type=int, default=0, help="also run this many seeded trials")

    copying = commands.add_parser("copying", help="context-aware selective copying").add_subparsers(
        dest="action", required=True)
    p = _leaf(copying, "gen", cmd_copying_gen, common, "write generated sequences as JSON lines")
    _add_copying_flags(p, with_seed=True)
    p.add_argument("--n", type=int, default=64, help="number of sequences")
    p = _leaf(copying, "train", cmd_copying_train, common, "train a KOSS stack on the copying task")
    _add_copying_flags(p)
    _add_model_flags(p)
    _add_train_flags(p, steps=20000)
    p = _leaf(copying, "eval", cmd_copying_eval, common, "accuracy across interference ratios")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--ratios", type=_float_list, default=[0.0, 0.25, 0.5])
    p.add_argument("--n-sequences", type=int, default=256)

    forecast = commands.add_parser("forecast", help="CSV time-series forecasting").add_subparsers(
        dest="action", required=True)
    p = _leaf(forecast, "synth", cmd_forecast_synth, common, "write a multi-sine plus noise dataset")
    p.add_argument("--length", type=int, default=8000)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-std", type=float, default=0.1)
    p = _leaf(forecast, "train", cmd_forecast_train, common, "train a KOSS forecaster")
    _add_forecast_flags(p)
    _add_model_flags(p, d_model=16, n_layers=1)
    _add_train_flags(p)
    p = _leaf(forecast, "eval", cmd_forecast_eval, common, "test-split MSE/MAE against persistence")
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")

    bench = commands.add_parser("bench", help="throughput benchmarks").add_subparsers(dest="action", required=True)
    p = _leaf(bench, "scan", cmd_bench_scan, common, "segment scan vs sequential fold")
    p.add_argument("--len", type=int, default=4096)
    p.add_argument("--segment", type=_int_list, default=[1, 16, 256, 4096])
    p.add_argument("--state-dim", type=int, default=8)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p = _leaf(bench, "layer", cmd_bench_layer, common, "KOSS layer time (and accuracy) per segment length")
    p.add_argument("--checkpoint", type=str, default=None, help="copying checkpoint for the accuracy column")
    p.add_argument("--len", type=int, default=256)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--segment", type=_int_list, default=[1, 8, 16, 64, 256])
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--n-sequences", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse flags; values from ``--config`` replace the built-in defaults, explicit flags win."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = _load_config_file(args.config)
        unknown = sorted(k for k in values if k not in vars(args) or k.startswith("_"))
        if unknown:
            raise ConfigError(f"unknown keys in {args.config}: {', '.join(unknown)}")
        args._parser.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except SystemExit as e:
        # argparse usage errors and --help
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG
    if args.log_level:
        set_level(args.log_level)

    try:
        return args._handler(args)
    except (ConfigError, ValidationError) as e:
        logger.error(f"configuration error: {e}")
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"numerical failure: {e}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
