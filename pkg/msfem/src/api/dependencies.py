from functools import lru_cache

from fastapi import Depends
from sqlalchemy.engine import Engine
from sqlmodel import SQLModel, create_engine

from msfem.src.config import Settings, settings
from msfem.src.data_access.repository import ReferenceCacheRepository


def get_settings() -> Settings:
    return settings


@lru_cache(maxsize=None)
def _engine_for(database_url: str) -> Engine:
    engine = create_engine(database_url, echo=False)

    # Create tables if they don't exist
    SQLModel.metadata.create_all(engine)

    return engine


def get_engine(settings: Settings = Depends(get_settings)) -> Engine:
    settings.cache_dir.mkdir(parents=True, exist_ok=True)
    return _engine_for(settings.resolved_database_url)


def get_reference_cache_repository(
    engine: Engine = Depends(get_engine),
    settings: Settings = Depends(get_settings),
) -> ReferenceCacheRepository:
    return ReferenceCacheRepository(engine, settings.cache_dir)
