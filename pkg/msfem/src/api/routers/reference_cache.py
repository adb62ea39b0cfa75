from typing import Dict, List, Optional

from fastapi import APIRouter, Depends, HTTPException
from pydantic import BaseModel

from msfem.src.api.dependencies import get_reference_cache_repository
from msfem.src.data_access.repository import ReferenceCacheRepository

router = APIRouter()


class ReferenceCacheResponse(BaseModel):
    key: str
    example: str
    method: str
    epsilon: float
    e0: float
    fine_n: int
    dt: float
    t_final: float
    self_convergence: Optional[float] = None
    created_at: str


@router.get("/reference_cache", response_model=List[ReferenceCacheResponse])
async def get_reference_cache(
    example: Optional[str] = None,
    repo: ReferenceCacheRepository = Depends(get_reference_cache_repository),
) -> List[ReferenceCacheResponse]:
    """
    List cached reference solutions, optionally for one example.
    """
    try:
        return [ReferenceCacheResponse(**entry.model_dump()) for entry in repo.get_entries(example)]
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error fetching reference cache: {str(e)}")


@router.delete("/reference_cache/{key}")
async def delete_reference(
    key: str, repo: ReferenceCacheRepository = Depends(get_reference_cache_repository)
) -> Dict[str, int]:
    count = repo.delete_entry(key)
    if count == 0:
        raise HTTPException(status_code=404, detail=f"No cache entry {key}")
    return {"deleted": count}
