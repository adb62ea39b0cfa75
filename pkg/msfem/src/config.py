from pathlib import Path
from typing import List, Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Process-wide settings, read from MSFEM_* environment variables or .env
    """

    model_config = SettingsConfigDict(env_file=".env", env_prefix="MSFEM_", extra="ignore")

    # API Settings
    api_title: str = "MsFEM Experiment API"
    api_version: str = "1.0.0"
    api_description: str = (
        "Multiscale finite element solvers for the semiclassical Schrodinger equation"
    )

    # Cache Settings
    cache_dir: Path = Path("./msfem_cache")
    # Defaults to a SQLite index inside cache_dir
    database_url: Optional[str] = None

    # Execution Settings
    max_workers: int = 4
    log_level: str = "INFO"

    # Numerical Settings
    dense_threshold: int = 2048
    factorization_dense_limit: int = 1500
    gram_condition_max: float = 1e12

    # Desk-scale guard rails, lifted by full_scale=true in an experiment file
    desk_scale_max_dofs: int = 20000
    desk_scale_max_steps: int = 70000

    # CORS Settings
    allow_origins: List[str] = ["*"]

    @property
    def resolved_database_url(self) -> str:
        if self.database_url:
            return self.database_url
        return f"sqlite:///{(self.cache_dir / 'reference_cache.sqlite').as_posix()}"


settings = Settings()
