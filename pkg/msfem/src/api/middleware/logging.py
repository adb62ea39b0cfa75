import logging
import uuid
from typing import Callable

from fastapi import Request
from fastapi.responses import Response
from starlette.middleware.base import BaseHTTPMiddleware

from msfem.src.utils.timing import timed_stage

logger = logging.getLogger(__name__)

REQUEST_ID_HEADER = "X-Request-ID"


class LoggingMiddleware(BaseHTTPMiddleware):
    """
    Tags every call with a request id and logs it as a timed stage.
    The first line carries the upload size, the last one the status code.
    """

    async def dispatch(self, request: Request, call_next: Callable) -> Response:
        request_id = request.headers.get(REQUEST_ID_HEADER) or uuid.uuid4().hex[:12]
        route = f"{request.method} {request.url.path}"
        size = request.headers.get("content-length", "0")
        logger.info(f"[{request_id}] {route} received ({size} bytes)")
        with timed_stage(f"[{request_id}] {route}", logger) as stage:
            response = await call_next(request)
        logger.info(f"[{request_id}] {route} answered {response.status_code} in {stage.seconds:.4f}s")
        response.headers[REQUEST_ID_HEADER] = request_id
        return response
