"""
Service modules for koss-ssm: experiment runners, benchmarks and tool entry points.
"""

from koss_ssm.services.experiment_service import run_riccati, sdu_response, sdu_trials
from koss_ssm.services.bench_service import bench_layer, bench_scan
