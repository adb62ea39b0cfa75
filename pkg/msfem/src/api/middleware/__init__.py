# Middleware package
from .exception_handling import ExceptionMiddleware
from .logging import LoggingMiddleware

__all__ = ["LoggingMiddleware", "ExceptionMiddleware"]
