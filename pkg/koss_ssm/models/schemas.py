"""
Pydantic schemas for experiment configuration and run records.
"""
import math
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from koss_ssm.config import DEFAULT_BATCH_SIZE, DEFAULT_LR, DEFAULT_SEGMENT_LEN

MaskKind = Literal["none", "soft", "hard"]


class SpectralConfig(BaseModel):
    """Sequence length, sample interval and damping mask of the SDU."""
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=2)
    dt: float = Field(default=1.0, gt=0)
    mask_kind: MaskKind = "none"
    omega_cut: Optional[float] = None
    detrend: bool = False

    @model_validator(mode="after")
    def _check_cutoff(self):
        if self.mask_kind != "none" and (self.omega_cut is None or not self.omega_cut > 0):
            raise ValueError("omega_cut must be > 0 when a damping mask is selected")
        return self

    @classmethod
    def training_default(cls, n: int, dt: float = 1.0) -> "SpectralConfig":
        """Soft-exponential mask at half Nyquist."""
        return cls(n=n, dt=dt, mask_kind="soft", omega_cut=math.pi / (2.0 * dt))


class CopyingConfig(BaseModel):
    """Context-aware selective copying generator settings."""
    model_config = ConfigDict(frozen=True)

    seq_len: int = Field(default=256, ge=4)
    vocab_size: int = Field(default=16, ge=4)
    n_data_tokens: int = Field(default=8, ge=1)
    interference_ratio: float = Field(default=0.0, ge=0.0, le=0.5)
    seed: int = 0

    @property
    def n_distractors(self) -> int:
        return int(math.floor(self.interference_ratio * self.n_data_tokens + 1e-12))

    @property
    def body_len(self) -> int:
        return self.seq_len - self.n_data_tokens

    @model_validator(mode="after")
    def _check_capacity(self):
        # each distractor occupies two slots: context marker + token
        needed = self.n_data_tokens + 2 * self.n_distractors
        if needed > self.body_len:
            raise ValueError(
                f"{self.n_data_tokens} data tokens and {self.n_distractors} distractors "
                f"do not fit in seq_len={self.seq_len}"
            )
        return self


class ModelConfig(BaseModel):
    """Dimensions and switches of a KOSS stack."""
    model_config = ConfigDict(frozen=True)

    d_model: int = Field(default=32, ge=1)
    d_state: int = Field(default=8, ge=1, le=64)
    n_layers: int = Field(default=2, ge=1)
    segment_len: int = Field(default=DEFAULT_SEGMENT_LEN, ge=1)
    gain_scale: float = Field(default=0.5, gt=0)
    gain_input: Literal["innovation", "input"] = "innovation"
    use_sdu: bool = True
    sample_dt: float = Field(default=1.0, gt=0)
    mask_kind: MaskKind = "soft"
    mlp_ratio: int = Field(default=2, ge=1)
    delta_min: float = Field(default=1e-3, gt=0)
    delta_max: float = Field(default=1e-1, gt=0)


class TrainConfig(BaseModel):
    """Optimisation settings; one evaluation "epoch" every eval_every steps."""
    model_config = ConfigDict(frozen=True)

    steps: int = Field(default=2000, ge=0)
    eval_every: int = Field(default=200, ge=1)
    lr: float = Field(default=DEFAULT_LR, ge=0)
    batch_size: int = Field(default=DEFAULT_BATCH_SIZE, ge=1)
    seed: int = 0
    dtype: Literal["float64", "float32"] = "float32"
    val_batches: int = Field(default=4, ge=1)


class ForecastConfig(BaseModel):
    """Window geometry and preprocessing of a forecasting run."""
    model_config = ConfigDict(frozen=True)

    lookback: int = Field(default=96, ge=1)
    horizon: int = Field(default=96, ge=1)
    has_timestamp: bool = False
    snr_db: Optional[float] = None
    noise_seed: int = 0


class HistoryRow(BaseModel):
    epoch: int
    step: int
    train_loss: float
    val_loss: float
    metrics: Dict[str, float] = Field(default_factory=dict)


class RunManifest(BaseModel):
    """Sidecar written next to every CLI output."""
    command: str
    config: Dict[str, Any]
    seed: Optional[int] = None
    code_version: str
    started_at: str
    finished_at: Optional[str] = None
    outputs: List[str] = Field(default_factory=list)


class CheckpointTensor(BaseModel):
    shape: List[int]
    dtype: Literal["<f8", "<f4"]
    data: str  # base64 of the little-endian buffer


class CheckpointFile(BaseModel):
    format: Literal["koss-checkpoint"] = "koss-checkpoint"
    version: Literal[1] = 1
    meta: Dict[str, Any] = Field(default_factory=dict)
    tensors: Dict[str, CheckpointTensor]
