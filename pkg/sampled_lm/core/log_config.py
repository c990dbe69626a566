# sampled_lm/core/log_config.py

import logging
from typing import Optional

from sampled_lm.core.config import settings


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging for CLI runs."""
    resolved = (level or settings.LOG_LEVEL).upper()
    logging.basicConfig(level=resolved, format=settings.LOG_FORMAT)

    # Set specific loggers to appropriate levels
    logging.getLogger("sampled_lm").setLevel(resolved)
    logging.getLogger("sampled_lm.storage").setLevel(
        max(logging.getLevelName(resolved), logging.INFO)
    )
