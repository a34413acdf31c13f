"""
Configuration settings for koss-ssm.
"""
import math
import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Runtime environment
LOG_LEVEL = os.getenv("KOSS_LOG_LEVEL", "WARNING")
OUT_DIR = os.getenv("KOSS_OUT_DIR", "runs")
THREADS = int(os.getenv("KOSS_THREADS", "1"))

# Tool server settings
DEFAULT_PORT = int(os.getenv("KOSS_MCP_PORT", "3001"))
DEFAULT_CONNECTION_TYPE = os.getenv("KOSS_MCP_CONNECTION", "stdio")  # Alternative: "http"

# Riccati gain-convergence experiment
RICCATI_DT = 0.01
RICCATI_T_END = 20.0
RICCATI_A = [[0.9, 0.0], [0.0, 0.95]]
RICCATI_B = [[1.0], [1.0]]
RICCATI_Q = [[1.0, 0.0], [0.0, 1.0]]
RICCATI_R = [[1.0]]
RICCATI_P0 = [
    [[1.0, 0.0], [0.0, 1.0]],
    [[10.0, 0.0], [0.0, 10.0]],
    [[0.1, 0.0], [0.0, 0.1]],
    [[5.0, 4.9], [4.9, 5.0]],
    [[0.1, 0.0], [0.0, 3.0]],
]
DIVERGENCE_LIMIT = 1e12

# SDU frequency-response experiment
SDU_FREQS = (0.1, 0.5, 1.0)
SDU_AMPLITUDES = (1.0, 0.5, 0.2)
SDU_N = 512
SDU_DT = 20.0 / 512  # 20 time units: every test tone completes whole periods
SDU_OMEGA_CUT = 4.0 * math.pi

# Model and training defaults
DEFAULT_SEGMENT_LEN = 16
DEFAULT_LR = 1e-3
DEFAULT_BATCH_SIZE = 32
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
