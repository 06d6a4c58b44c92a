import logging
import os
import sys
from typing import Optional

from homwb.exceptions import ConfigError

logger = logging.getLogger("homwb")

LOG_ENV_VAR = "HOMWB_LOG"
_LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
}


def resolve_level(level: Optional[str] = None) -> int:
    """
    Explicit level first, then the HOMWB_LOG environment variable, then warning.
    """
    name = level if level else os.environ.get(LOG_ENV_VAR, "warning")
    key = name.strip().lower()
    if key not in _LEVELS:
        raise ConfigError(f"unknown log level '{name}', expected one of {sorted(_LEVELS)}")
    return _LEVELS[key]


def configure_logging(level: Optional[str] = None) -> None:
    logger.setLevel(resolve_level(level))
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logger.addHandler(handler)
