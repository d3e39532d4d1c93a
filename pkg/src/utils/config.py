"""
Configuration module for the application.
"""
from typing import Optional
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings loaded from environment variables (prefix ``F2AT_``)."""

    model_config = SettingsConfigDict(
        env_prefix="F2AT_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Output Configuration
    out: str = Field("runs", description="Fallback output directory (F2AT_OUT)")

    # Logging Configuration
    log_level: str = Field("INFO", description="Minimum level for the stderr sink")
    log_file: Optional[str] = Field(None, description="Optional rotating log file")
    environment: str = Field("production", description="'development' disables the file sink")

    # Batch Prefetching
    prefetch: bool = Field(True, description="Produce training batches on a background thread")
    prefetch_depth: int = Field(4, ge=1, description="Queue depth of the batch producer")


# Create a global settings instance
settings = Settings()
