import logging
from typing import Optional

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    PROJECT_NAME: str = "sampled-lm"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    # Output
    OUTPUT_DIR: str = "runs"

    # Training recipe defaults (8192 log-uniform samples, SGD lr 1, clip 1)
    DEFAULT_NUM_SAMPLES: int = 8192
    DEFAULT_LEARNING_RATE: float = 1.0
    DEFAULT_CLIP_NORM: float = 1.0
    DEFAULT_BATCH_SIZE: int = 64
    DEFAULT_SEED: int = 0
    DEFAULT_SMOOTHING: float = 1.0  # add-delta for smoothed unigram noise

    # Optimum oracle
    ORACLE_MAX_CLASSES: int = 200
    ORACLE_TOLERANCE: float = 1e-8
    ORACLE_MAX_ITERS: int = 100_000

    # Benchmarks run single-threaded
    NUM_THREADS: int = 1

    TESTING: bool = False
    RUN_TAG: Optional[str] = None

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def parse_log_level(cls, v):
        """Accept level names in any case, reject unknown ones"""
        level = str(v).upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"Unknown log level: {v}")
        return level

    model_config = SettingsConfigDict(
        env_file=".env", extra="ignore"  # Ignore extra environment variables
    )


settings = Settings()
