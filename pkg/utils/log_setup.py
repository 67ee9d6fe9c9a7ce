"""
Logger setup shared by the planner, executor and workbench services
"""

import logging
from datetime import datetime
from pathlib import Path
from typing import Optional

CONSOLE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s"


def setup_logger(name: str, level: Optional[str] = None, log_dir: Optional[str] = None) -> logging.Logger:
    """Return a named logger with a console handler and an optional dated file handler.

    Unset level/log_dir are taken from the ``logging`` section of the settings.
    """
    if level is None or log_dir is None:
        from utils.config_manager import get_config

        settings = get_config().get_logging_settings()
        level = level or settings.get("level", "INFO")
        log_dir = log_dir if log_dir is not None else settings.get("log_dir")

    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, str(level).upper(), logging.INFO))

    if not logger.handlers:
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT))
        logger.addHandler(console_handler)

        if log_dir:
            try:
                directory = Path(log_dir)
                directory.mkdir(parents=True, exist_ok=True)
                log_file = directory / f"{name.lower()}_{datetime.now().strftime('%Y%m%d')}.log"
                file_handler = logging.FileHandler(log_file, encoding="utf-8")
                file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
                logger.addHandler(file_handler)
            except OSError as e:
                logger.warning(f"Failed to setup file logging: {e}")

    return logger
