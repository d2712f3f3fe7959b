"""
Logging configuration for SceneMix
"""

import logging
import sys
from pathlib import Path
from logging.handlers import RotatingFileHandler
import platform
import os


def get_app_dir() -> Path:
    """Get the per-user application directory based on OS."""
    system = platform.system()
    
    if system == "Windows":
        base = Path(os.environ.get("APPDATA", Path.home()))
    elif system == "Darwin":  # macOS
        base = Path.home() / "Library" / "Application Support"
    else:  # Linux
        base = Path(os.environ.get("XDG_CONFIG_HOME", Path.home() / ".config"))
    
    return base / "SceneMix"


def get_log_dir() -> Path:
    """Get the log directory (SCENEMIX_LOG_DIR overrides)."""
    override = os.environ.get("SCENEMIX_LOG_DIR")
    log_dir = Path(override) if override else get_app_dir() / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    return log_dir


class ConsoleHandler(logging.StreamHandler):
    """Writes to whatever sys.stderr is at the time of the call."""

    def __init__(self):
        logging.Handler.__init__(self)

    @property
    def stream(self):
        return sys.stderr


def setup_logger(name: str = "SceneMix") -> logging.Logger:
    """Set up and return the application logger."""
    logger = logging.getLogger(name)
    
    # Avoid adding handlers multiple times
    if logger.handlers:
        return logger
    
    logger.setLevel(logging.DEBUG)
    logger.propagate = False
    
    formatter = logging.Formatter(
        fmt="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S"
    )
    
    # File handler with rotation (5 MB max, keep 3 backups)
    try:
        log_file = get_log_dir() / "scenemix.log"
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=5 * 1024 * 1024,  # 5 MB
            backupCount=3,
            encoding="utf-8"
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)
    except OSError:
        # Read-only home directories still get console logging
        log_file = None
    
    # Console handler on stderr; stdout carries command output
    console_handler = ConsoleHandler()
    console_handler.setLevel(logging.INFO)
    console_handler.setFormatter(logging.Formatter(
        fmt="%(levelname)s: %(message)s"
    ))
    console_handler.set_name("console")
    logger.addHandler(console_handler)
    
    logger.debug(f"Log file: {log_file}")
    
    return logger


def set_console_level(level: int) -> None:
    """Change the verbosity of the console handler."""
    for handler in logger.handlers:
        if handler.get_name() == "console":
            handler.setLevel(level)


# Global logger instance
logger = setup_logger()
