import logging
from contextlib import asynccontextmanager
from typing import AsyncIterator, Dict, Union

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from msfem.src.config import settings

from .middleware.exception_handling import ExceptionMiddleware
from .middleware.logging import REQUEST_ID_HEADER, LoggingMiddleware
from .routers import experiments, potentials, reference_cache

logger = logging.getLogger(__name__)

API_PREFIX = "/api/v1"

OPENAPI_TAGS = [
    {"name": "potentials", "description": "Catalog potentials, drive norms and mesh-condition checks"},
    {"name": "experiments", "description": "Validate and run FEM / MsFEM / En-MsFEM error studies"},
    {"name": "reference_cache", "description": "Cached fine-mesh reference solutions"},
]

ROUTERS = [potentials.router, experiments.router, reference_cache.router]


@asynccontextmanager
async def lifespan(app: FastAPI) -> AsyncIterator[None]:
    settings.cache_dir.mkdir(parents=True, exist_ok=True)
    logger.info(
        f"{app.title} {app.version} serving references from {settings.cache_dir} "
        f"(index {settings.resolved_database_url}, {settings.max_workers} workers)"
    )
    yield
    logger.info(f"{app.title} stopped")


app = FastAPI(
    title=settings.api_title,
    description=settings.api_description,
    version=settings.api_version,
    openapi_tags=OPENAPI_TAGS,
    lifespan=lifespan,
)

# Origins come from MSFEM_ALLOW_ORIGINS; credentials stay off while "*" is allowed
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.allow_origins,
    allow_credentials=False,
    allow_methods=["GET", "POST", "DELETE"],
    allow_headers=["*"],
    expose_headers=[REQUEST_ID_HEADER],
)
app.add_middleware(LoggingMiddleware)
app.add_middleware(ExceptionMiddleware)

for router, tag in zip(ROUTERS, (t["name"] for t in OPENAPI_TAGS)):
    app.include_router(router, prefix=API_PREFIX, tags=[tag])


@app.get("/")
async def root() -> Dict[str, str]:
    return {"message": settings.api_title, "version": settings.api_version, "api": API_PREFIX}


@app.get("/health")
async def health_check() -> Dict[str, Union[str, bool]]:
    return {"status": "healthy", "cache_dir_ready": settings.cache_dir.is_dir()}
