"""
Fixed-step ODE integration.
"""
from typing import Callable

import numpy as np

from koss_ssm.errors import ConfigError

VectorField = Callable[[float, np.ndarray], np.ndarray]


def rk4_step(f: VectorField, y, t: float, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step for y' = f(t, y)."""
    if not dt > 0:
        raise ConfigError(f"rk4_step needs dt > 0, got {dt}")
    y = np.asarray(y, dtype=float)
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
