import logging
from typing import Any, Callable, Dict

from fastapi.responses import JSONResponse

from msfem.src.utils.exceptions import MsfemError

logger = logging.getLogger(__name__)


class ExceptionMiddleware:
    """Turns solver errors into 422 responses and anything else into 500"""

    def __init__(self, app: Callable) -> None:
        self.app = app

    async def __call__(self, scope: Dict[str, Any], receive: Callable, send: Callable) -> None:
        if scope["type"] != "http":
            await self.app(scope, receive, send)
            return
        try:
            await self.app(scope, receive, send)
        except MsfemError as exc:
            logger.warning(f"Solver error on {scope.get('path')}: {type(exc).__name__}: {exc}")
            response = JSONResponse(
                status_code=422,
                content={"detail": str(exc), "error": type(exc).__name__},
            )
            await response(scope, receive, send)
        except Exception as exc:
            logger.exception(f"Unhandled error on {scope.get('path')}")
            response = JSONResponse(
                status_code=500,
                content={"detail": "Internal Server Error", "error": str(exc)},
            )
            await response(scope, receive, send)
