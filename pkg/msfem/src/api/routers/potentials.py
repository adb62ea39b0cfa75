from typing import Optional

from fastapi import APIRouter, HTTPException, Query
from pydantic import BaseModel

from msfem.src.potentials.catalog import catalog, potential_bound, v2_sup_norm
from msfem.src.utils.exceptions import UnknownPotentialError

router = APIRouter()


class PotentialSummary(BaseModel):
    example_id: int
    name: str
    dim: int
    epsilon: float
    e0: float
    period: float
    t: float
    v2_sup_norm: float
    v0: float


@router.get("/potentials/{example_id}", response_model=PotentialSummary)
async def get_potential_summary(
    example_id: int,
    epsilon: float = Query(1.0 / 32.0, gt=0.0, lt=1.0),
    e0: float = 20.0,
    t: float = 0.0,
    grid_n: Optional[int] = Query(None, ge=2),
) -> PotentialSummary:
    """
    Sup norm of the drive at time t and the sampled bound V0 of a catalog potential.
    """
    try:
        spec = catalog(example_id, epsilon, e0)
    except UnknownPotentialError as e:
        raise HTTPException(status_code=404, detail=str(e))
    return PotentialSummary(
        example_id=example_id,
        name=spec.name,
        dim=spec.dim,
        epsilon=spec.epsilon,
        e0=spec.e0,
        period=spec.period,
        t=t,
        v2_sup_norm=v2_sup_norm(spec, t, grid_n),
        v0=potential_bound(spec, grid_n),
    )
