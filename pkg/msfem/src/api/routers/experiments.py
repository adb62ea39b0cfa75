from typing import Any, Dict

from fastapi import APIRouter, Depends, File, HTTPException, UploadFile
from fastapi.concurrency import run_in_threadpool

from msfem.src.api.dependencies import get_reference_cache_repository, get_settings
from msfem.src.api.utils import ApiUtils
from msfem.src.config import Settings
from msfem.src.data_access.repository import ReferenceCacheRepository
from msfem.src.experiments.config import ExperimentConfig, validate_config
from msfem.src.experiments.runner import run_experiment
from msfem.src.utils.exceptions import ConfigValidationError

router = APIRouter()


async def _read_config(file: UploadFile) -> ExperimentConfig:
    content = await file.read()
    try:
        return ApiUtils.parse_experiment_upload(content)
    except ConfigValidationError as e:
        # Sent as 400 with the full list rather than the middleware's 422
        raise HTTPException(status_code=400, detail=e.errors)
    except UnicodeDecodeError:
        raise HTTPException(status_code=400, detail=["experiment file must be UTF-8 text"])


@router.post("/experiments/validate")
async def validate_experiment(
    file: UploadFile = File(...),
    settings: Settings = Depends(get_settings),
) -> Dict[str, Any]:
    """
    Validate an uploaded experiment file; returns the normalized config and warnings.
    """
    config = await _read_config(file)
    try:
        report = await run_in_threadpool(validate_config, config, settings)
    except ConfigValidationError as e:
        raise HTTPException(status_code=400, detail=e.errors)
    return report.as_dict()


@router.post("/experiments/run")
async def run_uploaded_experiment(
    file: UploadFile = File(...),
    settings: Settings = Depends(get_settings),
    repo: ReferenceCacheRepository = Depends(get_reference_cache_repository),
) -> Dict[str, Any]:
    """
    Run an uploaded experiment synchronously and return its manifest.
    """
    config = await _read_config(file)
    try:
        result = await run_in_threadpool(run_experiment, config, repo, settings)
    except ConfigValidationError as e:
        raise HTTPException(status_code=400, detail=e.errors)
    return {
        "succeeded": result.succeeded,
        "output_dir": str(result.output_dir),
        "manifest": result.manifest,
    }
