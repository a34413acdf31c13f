"""
Classical Kalman-filter ground truth.

Two gain conventions live side by side:

* the measurement-update gain K = P C^T (C P C^T + R)^-1 with the Joseph-form
  covariance update, and
* the Riccati-flow gain K(t) = R^-1 B^T P(t) of
  dP/dt = A P + P A^T - P B R^-1 B^T P + Q, used by the gain-convergence
  experiment together with its algebraic steady state (CARE).
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import solve_continuous_lyapunov

from koss_ssm import config
from koss_ssm.errors import ConfigError, ConvergenceError, DivergenceError
from koss_ssm.numerics.linalg import solve_linear, symmetrize
from koss_ssm.numerics.ode import rk4_step
from koss_ssm.utils.logging import logger

_SYM_TOL = 1e-9
_PSD_TOL = -1e-12


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ConfigError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


def _check_psd(p: np.ndarray, name: str, strict: bool = False):
    if p.shape[0] != p.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {p.shape}")
    scale = max(1.0, float(np.abs(p).max()))
    if np.abs(p - p.T).max() > _SYM_TOL * scale:
        raise ConfigError(f"{name} must be symmetric")
    low = float(np.linalg.eigvalsh(p).min())
    if (strict and not low > 0) or low < _PSD_TOL * scale:
        kind = "positive definite" if strict else "positive semi-definite"
        raise ConfigError(f"{name} must be {kind} (min eigenvalue {low:.3e})")


@dataclass(frozen=True)
class FilterModel:
    """Observation model x = C h + v with cov(v) = R, process noise Q."""
    a: np.ndarray
    c: np.ndarray
    r: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        for name in ("a", "c", "r", "q"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        n = self.a.shape[0]
        m = self.c.shape[0]
        if self.a.shape != (n, n) or self.c.shape[1] != n:
            raise ConfigError("FilterModel shapes are inconsistent")
        if self.r.shape != (m, m) or self.q.shape != (n, n):
            raise ConfigError("FilterModel noise covariance shapes are inconsistent")
        _check_psd(self.r, "R", strict=True)
        _check_psd(self.q, "Q")


@dataclass(frozen=True)
class RiccatiSystem:
    """(A, B, Q, R) plus the initial covariances of the convergence experiment."""
    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    r: np.ndarray
    p0: Sequence[np.ndarray] = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("a", "b", "q", "r"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        n = self.a.shape[0]
        m = self.b.shape[1]
        if self.a.shape != (n, n) or self.b.shape[0] != n:
            raise ConfigError("RiccatiSystem A/B shapes are inconsistent")
        if self.q.shape != (n, n) or self.r.shape != (m, m):
            raise ConfigError("RiccatiSystem Q/R shapes are inconsistent")
        _check_psd(self.r, "R", strict=True)
        _check_psd(self.q, "Q")
        p0 = tuple(_as_matrix(p, "P0") for p in self.p0)
        for i, p in enumerate(p0):
            if p.shape != (n, n):
                raise ConfigError(f"P0[{i}] must be {n}x{n}")
            _check_psd(p, f"P0[{i}]")
        object.__setattr__(self, "p0", p0)

    @property
    def order(self) -> int:
        return self.a.shape[0]

    @property
    def gain_map(self) -> np.ndarray:
        """R^-1 B^T, so that K = gain_map @ P."""
        return solve_linear(self.r, self.b.T)

    @classmethod
    def default(cls) -> "RiccatiSystem":
        return cls(
            a=np.array(config.RICCATI_A),
            b=np.array(config.RICCATI_B),
            q=np.array(config.RICCATI_Q),
            r=np.array(config.RICCATI_R),
            p0=tuple(np.array(p) for p in config.RICCATI_P0),
        )


@dataclass
class GainTrajectory:
    times: np.ndarray
    gains: np.ndarray  # (T, m, n)

    @property
    def final(self) -> np.ndarray:
        return self.gains[-1]


def kalman_gain(p_prior, model: FilterModel) -> np.ndarray:
    """K = P C^T (C P C^T + R)^-1."""
    p = np.asarray(p_prior, dtype=float)
    innovation_cov = model.c @ p @ model.c.T + model.r
    # S is symmetric, so K^T = S^-1 C P
    return solve_linear(innovation_cov, model.c @ p).T


def covariance_update(p_prior, k, model: FilterModel) -> np.ndarray:
    """Joseph form (I - K C) P (I - K C)^T + K R K^T."""
    p = np.asarray(p_prior, dtype=float)
    k = np.atleast_2d(np.asarray(k, dtype=float))
    i_kc = np.eye(p.shape[0]) - k @ model.c
    return symmetrize(i_kc @ p @ i_kc.T + k @ model.r @ k.T)


def riccati_rhs(p, sys: RiccatiSystem) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    pb = p @ sys.b
    return sys.a @ p + p @ sys.a.T - pb @ solve_linear(sys.r, pb.T) + sys.q


def integrate_riccati(sys: RiccatiSystem, p0, dt: float = config.RICCATI_DT,
                      t_end: float = config.RICCATI_T_END) -> GainTrajectory:
    """
    RK4 integration of the Riccati ODE, symmetrising P after every step.

    Raises:
        DivergenceError: ||P|| exceeded the divergence limit
    """
    if not dt > 0 or not t_end > 0:
        raise ConfigError(f"integrate_riccati needs dt > 0 and t_end > 0 (dt={dt}, t_end={t_end})")
    steps = int(round(t_end / dt))
    if steps < 1:
        raise ConfigError("t_end must span at least one step")
    gain_map = sys.gain_map
    s = sys.b @ gain_map  # B R^-1 B^T

    def rhs(_t, p):
        return sys.a @ p + p @ sys.a.T - p @ s @ p + sys.q

    p = symmetrize(_as_matrix(p0, "P0"))
    times = np.arange(steps + 1) * dt
    gains = np.empty((steps + 1,) + gain_map.shape)
    gains[0] = gain_map @ p
    for i in range(1, steps + 1):
        p = symmetrize(rk4_step(rhs, p, times[i - 1], dt))
        if not np.all(np.isfinite(p)) or np.abs(p).max() > config.DIVERGENCE_LIMIT:
            raise DivergenceError("Riccati integration diverged", time=float(times[i]))
        gains[i] = gain_map @ p
    return GainTrajectory(times=times, gains=gains)


def _integrate_to_rest(sys: RiccatiSystem, p: np.ndarray, dt: float, t_end: float) -> np.ndarray:
    s = sys.b @ sys.gain_map

    def rhs(_t, x):
        return sys.a @ x + x @ sys.a.T - x @ s @ x + sys.q

    t = 0.0
    while t < t_end:
        p = symmetrize(rk4_step(rhs, p, t, dt))
        t += dt
        if not np.all(np.isfinite(p)) or np.abs(p).max() > config.DIVERGENCE_LIMIT:
            raise DivergenceError("Riccati seed integration diverged", time=t)
    return p


def solve_care(sys: RiccatiSystem, tol: float = 1e-9, max_iter: int = 50,
               seed_dt: float = config.RICCATI_DT, seed_horizon: float = 40.0) -> np.ndarray:
    """
    Stabilising solution of A P + P A^T - P B R^-1 B^T P + Q = 0.

    A long-horizon Riccati integration from P = 0 provides a stabilising seed;
    Newton-Kleinman iterations then solve
    (A - P S) P' + P' (A - P S)^T = -(Q + P S P), S = B R^-1 B^T.

    Raises:
        ConvergenceError: residual above ``tol`` after ``max_iter`` iterations
    """
    n = sys.order
    s = sys.b @ sys.gain_map
    p = _integrate_to_rest(sys, np.zeros((n, n)), seed_dt, seed_horizon)
    residual = float(np.linalg.norm(riccati_rhs(p, sys), "fro"))
    for it in range(max_iter):
        if residual <= tol:
            logger.debug(f"CARE converged after {it} Newton-Kleinman steps, residual {residual:.3e}")
            return p
        closed_loop = sys.a - p @ s
        p = symmetrize(solve_continuous_lyapunov(closed_loop, -(sys.q + p @ s @ p)))
        residual = float(np.linalg.norm(riccati_rhs(p, sys), "fro"))
    if residual <= tol:
        return p
    raise ConvergenceError("Newton-Kleinman did not converge", iterations=max_iter, residual=residual)


def steady_state_gain(sys: RiccatiSystem, p_inf: Optional[np.ndarray] = None) -> np.ndarray:
    if p_inf is None:
        p_inf = solve_care(sys)
    return sys.gain_map @ p_inf


def gain_convergence_experiment(sys: RiccatiSystem, dt: float = config.RICCATI_DT,
                                t_end: float = config.RICCATI_T_END,
                                workers: int = 1) -> pd.DataFrame:
    """
    Integrate K(t) from every initial covariance and tabulate it next to K_inf.

    Rows are ordered by (init_id, t); columns are init_id, t, k_0.., kinf_0..
    """
    if not sys.p0:
        raise ConfigError("gain_convergence_experiment needs at least one initial covariance")
    k_inf = steady_state_gain(sys).ravel()
    logger.info(f"Gain convergence: {len(sys.p0)} initialisations, dt={dt}, t_end={t_end}")

    def run(p0):
        return integrate_riccati(sys, p0, dt=dt, t_end=t_end)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        trajectories: List[GainTrajectory] = list(pool.map(run, sys.p0))

    frames = []
    for init_id, traj in enumerate(trajectories):
        flat = traj.gains.reshape(len(traj.times), -1)
        cols: Dict[str, np.ndarray] = {"init_id": np.full(len(traj.times), init_id), "t": traj.times}
        for j in range(flat.shape[1]):
            cols[f"k_{j}"] = flat[:, j]
        for j in range(flat.shape[1]):
            cols[f"kinf_{j}"] = np.full(len(traj.times), k_inf[j])
        frames.append(pd.DataFrame(cols))
    return pd.concat(frames, ignore_index=True)


def convergence_summary(table: pd.DataFrame) -> Dict[str, object]:
    """Final deviation from K_inf and terminal |dK/dt| per initialisation."""
    k_cols = [c for c in table.columns if c.startswith("k_")]
    inf_cols = [c for c in table.columns if c.startswith("kinf_")]
    rows = []
    for init_id, group in table.groupby("init_id", sort=True):
        k = group[k_cols].to_numpy()
        t = group["t"].to_numpy()
        k_inf = group[inf_cols].to_numpy()[-1]
        rows.append({
            "init_id": int(init_id),
            "final_gain": k[-1].tolist(),
            "max_abs_error": float(np.abs(k[-1] - k_inf).max()),
            "terminal_rate": float(np.abs(k[-1] - k[-2]).max() / (t[-1] - t[-2])) if len(t) > 1 else 0.0,
        })
    return {
        "k_inf": table[inf_cols].to_numpy()[0].tolist(),
        "per_init": rows,
        "max_abs_error": max(r["max_abs_error"] for r in rows),
        "terminal_rate": max(r["terminal_rate"] for r in rows),
    }
