from typing import List, Optional, Sequence


class MsfemError(Exception):
    """Base class for every error raised by the solver library."""


class MeshError(MsfemError, ValueError):
    pass


class NonFiniteValueError(MsfemError, ValueError):
    pass


class UnknownPotentialError(MsfemError, KeyError):
    def __str__(self) -> str:
        # KeyError quotes its argument, keep the message readable
        return str(self.args[0]) if self.args else ""


class IndefiniteOperatorError(MsfemError):
    """The energy form is not positive definite on the feasible set."""


class RankDeficientConstraintError(MsfemError):
    """The Schur complement of the constraint block is singular."""


class BasisConstructionError(MsfemError):
    """A per-vertex or per-snapshot basis problem failed.

    Args:
        message: human readable description
        vertex: coarse vertex whose local problem failed, if any
        time: potential time instance used for the failing build, if any
    """

    def __init__(
        self, message: str, vertex: Optional[int] = None, time: Optional[float] = None
    ) -> None:
        super().__init__(message)
        self.vertex = vertex
        self.time = time


class DegenerateBasisError(MsfemError):
    """Projected mass matrix is not positive definite."""


class EvolutionError(MsfemError):
    def __init__(self, message: str, step: Optional[int] = None) -> None:
        super().__init__(message)
        self.step = step


class ReferenceNormError(MsfemError, ZeroDivisionError):
    pass


class CacheCorruptionError(MsfemError):
    pass


class ConfigValidationError(MsfemError, ValueError):
    """Aggregated experiment configuration problems."""

    def __init__(self, errors: Sequence[str]) -> None:
        self.errors: List[str] = list(errors)
        super().__init__("; ".join(self.errors))
