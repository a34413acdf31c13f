"""
Core KOSS numerics: spectral differentiation, Kalman ground truth, scans and the layer.
"""

from koss_ssm.core.kalman import (FilterModel, RiccatiSystem, gain_convergence_experiment, integrate_riccati,
                                  kalman_gain, solve_care)
from koss_ssm.core.layer import KossParams, block_forward, layer_forward
from koss_ssm.core.scan import ScanElement, SegmentPlan, combine, inclusive_scan, segment_scan
from koss_ssm.core.sdu import central_difference, spectral_derivative, spectral_derivative_adjoint
