"""
Application Configuration
Pydantic Settings for the TCLA laboratory
"""

from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field
from pathlib import Path
from functools import lru_cache

# =============================================================================
# Path Configuration - Computed at module level for reliability
# =============================================================================
# PROJECT_ROOT is the repository folder holding the tcla package
_PROJECT_ROOT = Path(__file__).parent.parent
_CONFIG_DIR = _PROJECT_ROOT / 'config'
_DEFAULT_CONFIG_PATH = _CONFIG_DIR / 'experiment.json'


class Settings(BaseSettings):
    """
    Runtime settings loaded from environment variables (prefix TCLA_)
    """

    model_config = SettingsConfigDict(
        env_prefix="TCLA_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )

    # Logging
    LOG_LEVEL: str = Field(default="INFO")
    LOG_TO_FILE: bool = Field(default=True)
    LOG_MAX_FILE_SIZE: int = 10 * 1024 * 1024  # 10 MB
    LOG_BACKUP_COUNT: int = 5

    # Numerics
    TORCH_NUM_THREADS: int = Field(default=1, ge=1)

    # Paths
    PROJECT_ROOT: Path = _PROJECT_ROOT
    CONFIG_DIR: Path = _CONFIG_DIR
    DEFAULT_CONFIG_PATH: Path = _DEFAULT_CONFIG_PATH

    @property
    def LOGGING_CONFIG(self) -> dict:
        return {
            'level': self.LOG_LEVEL,
            'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            'date_format': '%Y-%m-%d %H:%M:%S',
            'max_file_size': self.LOG_MAX_FILE_SIZE,
            'backup_count': self.LOG_BACKUP_COUNT,
            'to_file': self.LOG_TO_FILE,
        }


@lru_cache()
def get_settings() -> Settings:
    """
    Get cached settings instance

    Returns:
        Settings: Runtime settings
    """
    return Settings()


settings = get_settings()
