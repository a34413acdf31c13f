"""
Logging configuration for koss-ssm.
"""
import logging
import os

from rich.console import Console
from rich.logging import RichHandler


def setup_logging():
    # Respect KOSS_LOG_LEVEL environment variable, default to WARNING
    # stdout is reserved for CSV/JSON output and the MCP stdio transport
    log_level_name = os.environ.get("KOSS_LOG_LEVEL", "WARNING").upper()
    log_level = getattr(logging, log_level_name, logging.WARNING)

    handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)
    handler.setFormatter(logging.Formatter("%(name)s | %(message)s"))

    logger = logging.getLogger("koss")
    logger.setLevel(log_level)
    logger.handlers = [handler]
    logger.propagate = False

    for noisy in ("matplotlib", "asyncio", "httpx", "uvicorn.access", "uvicorn.error"):
        logging.getLogger(noisy).setLevel(logging.CRITICAL)

    return logger


def set_level(level_name: str):
    """Override the level chosen at import (used by the CLI --log-level flag)."""
    logger.setLevel(getattr(logging, level_name.upper(), logging.WARNING))


# Create the logger instance for import by other modules
logger = setup_logging()
