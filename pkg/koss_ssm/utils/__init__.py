"""
Utility modules for koss-ssm.
"""

from koss_ssm.utils.logging import setup_logging, logger
