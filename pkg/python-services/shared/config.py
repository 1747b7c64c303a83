"""
Centralized Configuration for the KG-NSF toolkit
Ambient settings (logging, workers, file names, numerical guards) read from the environment
"""

import sys
from typing import Optional
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
from loguru import logger


LOG_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan> - <level>{message}</level>"
)


class KGNSFSettings(BaseSettings):
    """Toolkit-wide settings. Command-line flags always take precedence."""

    model_config = SettingsConfigDict(
        env_prefix="KGNSF_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    log_level: str = Field(default="INFO")
    log_json: bool = Field(default=False)

    # Run directories
    runs_dir: str = Field(default="./runs")
    checkpoint_name: str = Field(default="best.kgnsf")
    metrics_name: str = Field(default="metrics.jsonl")
    manifest_name: str = Field(default="manifest.json")

    # Evaluation
    eval_workers: int = Field(default=1, ge=1)
    eval_chunk_size: int = Field(default=256, ge=1)

    # Reproducibility
    default_seed: int = Field(default=0)

    # Numerical guards
    standardize_eps: float = Field(default=1e-12, gt=0.0)
    sdbn_group_size: int = Field(default=5, ge=1)
    sdbn_eigen_floor: float = Field(default=1e-5, gt=0.0)

    # Negative sampling
    max_neg_attempts: int = Field(default=100, ge=1)

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        allowed = ["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"]
        v = v.upper()
        if v not in allowed:
            raise ValueError(f"log_level must be one of {allowed}")
        return v


# Singleton instance
_settings_instance: Optional[KGNSFSettings] = None


def get_settings() -> KGNSFSettings:
    """
    Get or create the singleton settings instance.

    Returns:
        KGNSFSettings resolved from environment and .env
    """
    global _settings_instance

    if _settings_instance is None:
        _settings_instance = KGNSFSettings()

    return _settings_instance


def configure_logging(level: str = None, json: bool = None) -> None:
    """
    Replace loguru's default sink with the toolkit's stderr sink.

    Args:
        level: Minimum level (uses settings if None)
        json: Emit serialized JSON records instead of coloured text
    """
    settings = get_settings()
    level = (level or settings.log_level).upper()
    json = settings.log_json if json is None else json

    logger.remove()
    if json:
        logger.add(sys.stderr, level=level, serialize=True)
    else:
        logger.add(sys.stderr, level=level, format=LOG_FORMAT)


def log_configuration():
    """Log current ambient configuration"""
    settings = get_settings()

    logger.info("=== Configuration ===")
    logger.info(f"Log Level: {settings.log_level}")
    logger.info(f"Runs Dir: {settings.runs_dir}")
    logger.info(f"Eval Workers: {settings.eval_workers} (chunk {settings.eval_chunk_size})")
    logger.info(f"SDBN: group size {settings.sdbn_group_size}, eigen floor {settings.sdbn_eigen_floor}")
    logger.info(f"Standardize eps: {settings.standardize_eps}")
    logger.info(f"Max negative attempts: {settings.max_neg_attempts}")
    logger.info("=====================")
