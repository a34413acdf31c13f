"""
KOSS: Kalman-optimal selective state space layers.

Numerical library and command-line experiments for innovation-driven state
space layers: spectral differentiation, Riccati/CARE gain convergence,
segment-wise parallel scans and desk-scale training on synthetic tasks.
"""

__version__ = "0.1.0"

from koss_ssm.models.schemas import CopyingConfig, ModelConfig, SpectralConfig, TrainConfig
