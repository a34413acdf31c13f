"""
Run artifacts: CSV tables, JSON manifest sidecars and parameter checkpoints.

Every file is written to a temporary sibling first and moved into place, so a
reader never sees a partial artifact.
"""
import base64
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from koss_ssm import __version__
from koss_ssm.errors import ConfigError
from koss_ssm.models.schemas import CheckpointFile, CheckpointTensor, RunManifest

PathLike = Union[str, Path]
_DTYPES = {"float64": "<f8", "float32": "<f4"}


def atomic_write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def manifest_path(output: PathLike) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


def start_manifest(command: str, config: Dict[str, Any], seed: Optional[int] = None) -> RunManifest:
    return RunManifest(command=command, config=config, seed=seed, code_version=__version__, started_at=utc_now())


def write_manifest(manifest: RunManifest, output: PathLike) -> Path:
    """Finish ``manifest`` and write it next to ``output`` as <output>.manifest.json."""
    outputs = list(manifest.outputs)
    if str(output) not in outputs:
        outputs.append(str(output))
    done = manifest.model_copy(update={"finished_at": utc_now(), "outputs": outputs})
    return atomic_write_text(manifest_path(output), done.model_dump_json(indent=2))


def encode_tensor(array: np.ndarray, dtype: str = "float64") -> CheckpointTensor:
    if dtype not in _DTYPES:
        raise ConfigError(f"unsupported checkpoint dtype '{dtype}'")
    raw = np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes()
    return CheckpointTensor(shape=list(np.shape(array)), dtype=_DTYPES[dtype], data=base64.b64encode(raw).decode("ascii"))


def decode_tensor(tensor: CheckpointTensor) -> np.ndarray:
    raw = base64.b64decode(tensor.data)
    arr = np.frombuffer(raw, dtype=np.dtype(tensor.dtype))
    expected = int(np.prod(tensor.shape)) if tensor.shape else 1
    if arr.size != expected:
        raise ConfigError(f"checkpoint tensor holds {arr.size} values, shape {tensor.shape} needs {expected}")
    return arr.reshape(tensor.shape).astype(np.float64)


def save_checkpoint(path: PathLike, tensors: Dict[str, np.ndarray], meta: Optional[Dict[str, Any]] = None,
                    dtype: str = "float64") -> Path:
    """JSON container of named little-endian tensors, base64 encoded."""
    payload = CheckpointFile(meta=meta or {}, tensors={name: encode_tensor(arr, dtype) for name, arr in tensors.items()})
    return atomic_write_text(path, payload.model_dump_json())


def load_checkpoint(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        payload = CheckpointFile.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise ConfigError(f"invalid checkpoint {path}: {e}")
    return {name: decode_tensor(t) for name, t in payload.tensors.items()}, dict(payload.meta)
