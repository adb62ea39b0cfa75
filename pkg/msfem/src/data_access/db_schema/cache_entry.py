from typing import Optional

from sqlmodel import Field, SQLModel


class ReferenceCacheEntry(SQLModel, table=True):
    __tablename__ = "reference_cache"
    key: str = Field(primary_key=True, index=True, max_length=64)
    example: str = Field(index=True)
    method: str = "fem"
    epsilon: float
    e0: float
    fine_n: int
    dt: float
    t_final: float
    record_times: str  # JSON list
    payload_path: str
    checksum: str
    self_convergence: Optional[float] = None
    created_at: str
