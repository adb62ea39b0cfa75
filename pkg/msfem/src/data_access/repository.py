import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from sqlalchemy.engine import Engine
from sqlalchemy.exc import SQLAlchemyError
from sqlmodel import Session, delete, select

from msfem.src.data_access.containers import read_container, write_container
from msfem.src.data_access.db_schema.cache_entry import ReferenceCacheEntry

logger = logging.getLogger(__name__)


class ReferenceCacheRepository:
    """Index of cached reference solutions plus one payload file per key"""

    def __init__(self, engine: Engine, cache_dir: Path) -> None:
        """
        Initialize repository with database engine and payload directory

        Args:
            engine: SQLAlchemy engine holding the reference_cache table
            cache_dir: directory receiving one .npz payload per cache key
        """
        self.engine = engine
        self.cache_dir = Path(cache_dir)

    def payload_path(self, key: str) -> Path:
        return self.cache_dir / f"reference_{key}.npz"

    def get_entries(self, example: Optional[str] = None) -> Sequence[ReferenceCacheEntry]:
        """List cache entries, optionally for one example"""
        with Session(self.engine) as session:
            query = select(ReferenceCacheEntry)
            if example:
                query = query.where(ReferenceCacheEntry.example == example)
            return session.exec(query).all()

    def get_entry(self, key: str) -> Optional[ReferenceCacheEntry]:
        with Session(self.engine) as session:
            return session.get(ReferenceCacheEntry, key)

    def add_entry(self, entry: ReferenceCacheEntry) -> ReferenceCacheEntry:
        """Insert or replace an entry"""
        with Session(self.engine) as session:
            try:
                merged = session.merge(entry)
                session.commit()
                session.refresh(merged)
                return merged
            except SQLAlchemyError as e:
                session.rollback()
                raise e

    def delete_entry(self, key: str) -> int:
        """Delete an entry and its payload. Returns number of entries deleted."""
        with Session(self.engine) as session:
            result = session.exec(delete(ReferenceCacheEntry).where(ReferenceCacheEntry.key == key))
            session.commit()
            count = result.rowcount
        path = self.payload_path(key)
        if path.exists():
            path.unlink()
        return count

    def write_payload(
        self, key: str, arrays: Dict[str, np.ndarray], header: Dict
    ) -> Tuple[Path, str]:
        path = self.payload_path(key)
        checksum = write_container(path, arrays, header)
        logger.info(f"Wrote reference payload {path.name} checksum={checksum[:12]}")
        return path, checksum

    def read_payload(self, entry: ReferenceCacheEntry) -> Tuple[Dict[str, np.ndarray], Dict]:
        """Load and verify a payload; raises CacheCorruptionError on mismatch"""
        return read_container(Path(entry.payload_path), expected_checksum=entry.checksum)
