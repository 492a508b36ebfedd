import sys
from pathlib import Path

from loguru import logger


def configure_logging(level: str = "INFO", log_dir: Path | None = None) -> None:
    """Route loguru to stderr and, when given, to ``log_dir/run.log``."""
    logger.remove()
    logger.add(sys.stderr, level=level, format="<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {name} - {message}")
    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)
        logger.add(log_dir / "run.log", level="DEBUG", mode="w")
