"""
Configuration and record schemas for koss-ssm.
"""

from koss_ssm.models.schemas import (CheckpointFile, CopyingConfig, ForecastConfig, HistoryRow, ModelConfig,
                                     RunManifest, SpectralConfig, TrainConfig)
