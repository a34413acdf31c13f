"""
Small dense linear algebra: matrix exponential and guarded linear solves.
"""
import math

import numpy as np
from scipy import linalg as sla

from koss_ssm.errors import ConfigError, NonFiniteError, SingularMatrixError

MAX_EXPM_ORDER = 64
CONDITION_LIMIT = 1e12
_PADE_DEGREE = 6


def _pade_coefficients(p: int) -> np.ndarray:
    c = [1.0]
    for k in range(1, p + 1):
        c.append(c[-1] * (p - k + 1) / (k * (2 * p - k + 1)))
    return np.array(c)


_PADE6 = _pade_coefficients(_PADE_DEGREE)


def mat_exp(m) -> np.ndarray:
    """
    Matrix exponential by scaling and squaring with a (6,6) Pade approximant.

    Accepts a single (n, n) matrix or a stack (..., n, n); a stack shares one
    scaling exponent chosen from its largest 1-norm so that ||M / 2^s||_1 < 0.5.

    Raises:
        NonFiniteError: the input contains NaN or Inf
        ConfigError: the matrix is not square or n exceeds 64
    """
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ConfigError(f"mat_exp needs square matrices, got shape {m.shape}")
    n = m.shape[-1]
    if n > MAX_EXPM_ORDER:
        raise ConfigError(f"mat_exp supports n <= {MAX_EXPM_ORDER}, got {n}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("mat_exp input is not finite", where="input")

    norm = float(np.abs(m).sum(axis=-2).max()) if m.size else 0.0
    s = 0 if norm < 0.5 else int(math.floor(math.log2(norm / 0.5))) + 1
    x = m / (2.0 ** s)

    ident = np.broadcast_to(np.eye(n), m.shape)
    x2 = x @ x
    x4 = x2 @ x2
    x6 = x4 @ x2
    c = _PADE6
    odd = x @ (c[1] * ident + c[3] * x2 + c[5] * x4)
    even = c[0] * ident + c[2] * x2 + c[4] * x4 + c[6] * x6
    e = np.linalg.solve(even - odd, even + odd)
    for _ in range(s):
        e = e @ e
    return e


def condition_number(m) -> float:
    m = np.asarray(m, dtype=float)
    with np.errstate(all="ignore"):
        cond = float(np.linalg.cond(m))
    return cond if math.isfinite(cond) else math.inf


def solve_linear(m, b) -> np.ndarray:
    """
    Solve M x = b by LU factorisation with partial pivoting.

    ``b`` may be a vector or a matrix of right-hand sides.

    Raises:
        SingularMatrixError: condition estimate is not below 1e12
    """
    m = np.asarray(m, dtype=float)
    b = np.asarray(b, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"solve_linear needs a square matrix, got shape {m.shape}")
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(b))):
        raise NonFiniteError("solve_linear input is not finite", where="input")
    cond = condition_number(m)
    if not cond < CONDITION_LIMIT:
        raise SingularMatrixError("matrix is singular or ill-conditioned", condition=cond)
    lu, piv = sla.lu_factor(m, check_finite=False)
    return sla.lu_solve((lu, piv), b, check_finite=False)


def symmetrize(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + np.swapaxes(p, -1, -2))
