"""
Async entry points behind the MCP tools.

Each function runs its experiment in a worker thread and returns either a
JSON-ready dict or ``{"error": ...}``; exceptions never reach the server.
"""
import asyncio
from typing import Any, Dict

from koss_ssm import config
from koss_ssm.models.schemas import CopyingConfig
from koss_ssm.services.experiment_service import run_riccati, sdu_response, top_quartile_energy
from koss_ssm.tasks.copying import gen_selective_copying
from koss_ssm.utils.logging import logger


async def riccati_convergence(dt: float = config.RICCATI_DT, t_end: float = config.RICCATI_T_END) -> Dict[str, Any]:
    """
    Integrate the Riccati equation of the default two-state system from five initial covariances.

    Args:
        dt: RK4 step
        t_end: integration horizon

    Returns:
        K_inf, final gain and deviation per initialisation, worst deviation and terminal |dK/dt|
    """
    try:
        logger.info(f"Riccati convergence requested: dt={dt}, t_end={t_end}")
        _, summary = await asyncio.to_thread(run_riccati, None, dt, t_end)
        return summary
    except Exception as e:
        logger.exception(f"Unexpected error in riccati_convergence: {str(e)}")
        return {"error": f"Riccati experiment failed: {str(e)}"}


async def sdu_response_summary(seed: int = 0, noise_std: float = 1.0,
                               omega_cut: float = config.SDU_OMEGA_CUT) -> Dict[str, Any]:
    try:
        logger.info(f"SDU response requested: seed={seed}, noise_std={noise_std}, omega_cut={omega_cut}")
        frame = await asyncio.to_thread(sdu_response, seed, noise_std, omega_cut)
        energy = top_quartile_energy(frame)
        return {
            "seed": seed,
            "top_quartile_sdu": energy["sdu"],
            "top_quartile_finite_diff": energy["finite_diff"],
            "sdu_lower": energy["sdu"] < energy["finite_diff"],
        }
    except Exception as e:
        logger.exception(f"Unexpected error in sdu_response_summary: {str(e)}")
        return {"error": f"SDU response failed: {str(e)}"}


async def generate_copying(seq_len: int = 256, n_data_tokens: int = 8, interference_ratio: float = 0.0,
                           seed: int = 0) -> Dict[str, Any]:
    try:
        cfg = CopyingConfig(seq_len=seq_len, n_data_tokens=n_data_tokens,
                            interference_ratio=interference_ratio, seed=seed)
        sample = await asyncio.to_thread(gen_selective_copying, cfg)
        return {
            "tokens": sample.tokens.tolist(),
            "targets": sample.targets.tolist(),
            "recall_start": cfg.body_len,
            "n_distractors": cfg.n_distractors,
        }
    except Exception as e:
        logger.exception(f"Unexpected error in generate_copying: {str(e)}")
        return {"error": f"Copying generation failed: {str(e)}"}
