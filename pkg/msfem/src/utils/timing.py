import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Optional

logger = logging.getLogger(__name__)


@dataclass
class StageTiming:
    label: str
    start: float
    seconds: Optional[float] = None


@contextmanager
def timed_stage(label: str, log: Optional[logging.Logger] = None) -> Iterator[StageTiming]:
    """Context manager that logs a stage's start, wall time and failure"""
    log = log or logger
    record = StageTiming(label=label, start=time.perf_counter())
    log.info(f"Stage started: {label}")
    try:
        yield record
    except Exception as exc:
        record.seconds = time.perf_counter() - record.start
        log.error(f"Stage failed: {label} Error: {exc} Time: {record.seconds:.4f}s")
        raise
    record.seconds = time.perf_counter() - record.start
    log.info(f"Stage finished: {label} Time: {record.seconds:.4f}s")
