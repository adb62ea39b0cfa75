"""Catalog of multiscale potentials with separable time-dependent drives.

The potential is v(x, t) = v1(x) + sum_n v2_n(x) s_n(t). The affine form lets
fine and coarse operators be assembled once per spatial term.
"""

import importlib
import logging
import math
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Optional, Tuple

import numpy as np

from msfem.src.utils.exceptions import UnknownPotentialError

logger = logging.getLogger(__name__)

# Vectorized field evaluated as f(x) in 1D or f(x, y) in 2D.
ScalarField = Callable[..., np.ndarray]
TimeFactor = Callable[[float], float]


@dataclass(frozen=True)
class DriveTerm:
    spatial: ScalarField
    temporal: TimeFactor


@dataclass(frozen=True)
class PotentialSpec:
    epsilon: float
    dim: int
    v1: ScalarField
    terms: Tuple[DriveTerm, ...]
    e0: float
    period: float = 1.0
    name: str = "custom"
    example_id: Optional[int] = None
    source: Optional[str] = None
    parameters: dict = field(default_factory=dict, compare=False, hash=False)

    def v2(self, t: float, *coords: np.ndarray) -> np.ndarray:
        total = np.zeros(np.broadcast_shapes(*(np.shape(c) for c in coords)))
        for term in self.terms:
            total = total + term.spatial(*coords) * term.temporal(t)
        return total

    def evaluate(self, t: float, *coords: np.ndarray) -> np.ndarray:
        return self.v1(*coords) + self.v2(t, *coords)

    def at_time(self, t: float) -> ScalarField:
        """Frozen potential v(., t) as a field"""
        return partial(_evaluate_frozen, self, t)


def _evaluate_frozen(spec: PotentialSpec, t: float, *coords: np.ndarray) -> np.ndarray:
    return spec.evaluate(t, *coords)


def _mathieu(x: np.ndarray, epsilon: float) -> np.ndarray:
    return np.cos(2.0 * np.pi * x / epsilon)


def _two_scale(x: np.ndarray, epsilon: float) -> np.ndarray:
    return np.sin(2.0 * x**2) * np.sin(2.0 * np.pi * x / epsilon)


def _layered(x: np.ndarray, epsilon: float, epsilon2: float) -> np.ndarray:
    left = 0.5 * np.cos(2.0 * np.pi * x / epsilon)
    right = 0.5 * np.cos(2.0 * np.pi * x / epsilon2) + 0.5
    return 2.0 * (x - 0.5) ** 2 - 0.5 + np.where(x <= 0.5, left, right)


def _checkerboard(
    x: np.ndarray, y: np.ndarray, epsilon: float, epsilon2: float, symmetric: bool
) -> np.ndarray:
    diagonal = ((x <= 0.5) & (y <= 0.5)) | ((x >= 0.5) & (y >= 0.5))
    first = (np.sin(2.0 * np.pi * x / epsilon2) + 1.0) * (
        np.cos(2.0 * np.pi * y / epsilon2) + (1.0 if symmetric else 0.0)
    )
    other = np.sin(2.0 * np.pi * x / epsilon) * (np.cos(2.0 * np.pi * y / epsilon) + 1.0)
    return np.where(diagonal, first, other)


def _scaled_x(x: np.ndarray, e0: float) -> np.ndarray:
    return e0 * x


def _scaled_x_plus_y(x: np.ndarray, y: np.ndarray, e0: float) -> np.ndarray:
    return e0 * (x + y)


def _sine_drive(t: float) -> float:
    return math.sin(2.0 * math.pi * t)


def _exponential_drive(t: float) -> float:
    return (math.exp(2.0 * math.sin(2.0 * math.pi * t)) - 1.0) / (math.exp(2.0) - 1.0)


def _triangle_drive(t: float) -> float:
    """Triangular wave of period 1/2: 4t on [0, 1/4], 2 - 4t on (1/4, 1/2]"""
    tau = math.fmod(t, 0.5)
    if tau < 0.0:
        tau += 0.5
    return 4.0 * tau if tau <= 0.25 else 2.0 - 4.0 * tau


def catalog(
    example_id: int, epsilon: float, e0: float = 20.0, symmetric_checkerboard: bool = False
) -> PotentialSpec:
    """Potentials of the four reference experiments.

    Args:
        example_id: 1 Mathieu, 2 multiplicative two-scale, 3 layered, 4 2D checkerboard
        epsilon: semiclassical parameter
        e0: driving amplitude
        symmetric_checkerboard: add the +1 to the cosine of the first checkerboard branch

    Returns:
        PotentialSpec with the drive in affine form
    """
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if example_id == 1:
        return PotentialSpec(
            epsilon=epsilon,
            dim=1,
            v1=partial(_mathieu, epsilon=epsilon),
            terms=(DriveTerm(partial(_scaled_x, e0=e0), _sine_drive),),
            e0=e0,
            name="mathieu",
            example_id=1,
        )
    if example_id == 2:
        return PotentialSpec(
            epsilon=epsilon,
            dim=1,
            v1=partial(_two_scale, epsilon=epsilon),
            terms=(DriveTerm(partial(_scaled_x, e0=e0), _exponential_drive),),
            e0=e0,
            name="two_scale",
            example_id=2,
        )
    if example_id == 3:
        epsilon2 = 4.0 * epsilon / 3.0
        return PotentialSpec(
            epsilon=epsilon,
            dim=1,
            v1=partial(_layered, epsilon=epsilon, epsilon2=epsilon2),
            terms=(DriveTerm(partial(_scaled_x, e0=e0), _triangle_drive),),
            e0=e0,
            period=0.5,
            name="layered",
            example_id=3,
            parameters={"epsilon2": epsilon2},
        )
    if example_id == 4:
        epsilon2 = 4.0 * epsilon / 3.0
        return PotentialSpec(
            epsilon=epsilon,
            dim=2,
            v1=partial(
                _checkerboard,
                epsilon=epsilon,
                epsilon2=epsilon2,
                symmetric=symmetric_checkerboard,
            ),
            terms=(DriveTerm(partial(_scaled_x_plus_y, e0=e0), _sine_drive),),
            e0=e0,
            name="checkerboard",
            example_id=4,
            parameters={"epsilon2": epsilon2, "symmetric": symmetric_checkerboard},
        )
    raise UnknownPotentialError(f"Unknown example id {example_id}; expected 1, 2, 3 or 4")


def load_custom_potential(target: str, epsilon: float, e0: float) -> PotentialSpec:
    """Resolve ``package.module:factory`` and call ``factory(epsilon, e0)``"""
    module_name, _, attr = target.partition(":")
    if not module_name or not attr:
        raise UnknownPotentialError(f"Custom potential must look like 'module:factory', got {target!r}")
    try:
        factory = getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as e:
        raise UnknownPotentialError(f"Cannot load custom potential {target!r}: {e}") from e
    spec = factory(epsilon, e0)
    if not isinstance(spec, PotentialSpec):
        raise UnknownPotentialError(f"{target!r} returned {type(spec).__name__}, not PotentialSpec")
    return replace(spec, source=target)


def sampling_grid(dim: int, grid_n: int) -> Tuple[np.ndarray, ...]:
    """Uniform grid with ``grid_n`` points per side, endpoints included"""
    if grid_n < 2:
        raise ValueError(f"grid_n must be >= 2, got {grid_n}")
    axis = np.linspace(0.0, 1.0, grid_n)
    if dim == 1:
        return (axis,)
    return tuple(np.meshgrid(axis, axis, indexing="ij"))


def default_grid_n(dim: int) -> int:
    return 4096 if dim == 1 else 512


def v2_sup_norm(spec: PotentialSpec, t: float, grid_n: Optional[int] = None) -> float:
    coords = sampling_grid(spec.dim, grid_n or default_grid_n(spec.dim))
    return float(np.max(np.abs(spec.v2(t, *coords))))


def potential_bound(
    spec: PotentialSpec, grid_n: Optional[int] = None, n_times: int = 64
) -> float:
    """Sampled V0 = sup |v1 + v2| over the grid and one drive period"""
    coords = sampling_grid(spec.dim, grid_n or default_grid_n(spec.dim))
    static = spec.v1(*coords)
    spatial = [term.spatial(*coords) for term in spec.terms]
    bound = 0.0
    for t in np.linspace(0.0, spec.period, n_times, endpoint=False):
        values = static + sum(
            (s * term.temporal(float(t)) for s, term in zip(spatial, spec.terms)),
            np.zeros_like(static),
        )
        bound = max(bound, float(np.max(np.abs(values))))
    return bound


def mesh_condition_ratio(v0: float, h_coarse: float, epsilon: float) -> float:
    """sqrt(V0) H / eps; the coarse mesh should keep this of order one"""
    return math.sqrt(v0) * h_coarse / epsilon


def gaussian_packet(dim: int, sigma: float = 0.2, center: float = 0.5) -> ScalarField:
    """Normalized Gaussian initial data centred in the domain"""
    return partial(_gaussian, dim=dim, sigma=sigma, center=center)


def _gaussian(*coords: np.ndarray, dim: int, sigma: float, center: float) -> np.ndarray:
    r2 = sum((c - center) ** 2 for c in coords)
    amplitude = (1.0 / (2.0 * np.pi * sigma**2)) ** (dim / 4.0)
    return amplitude * np.exp(-r2 / (4.0 * sigma**2))
