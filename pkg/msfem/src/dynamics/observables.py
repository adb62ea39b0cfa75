import logging
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from msfem.src.discretization.fem_assembly import (
    FineOperators,
    element_gradients,
    element_quadrature_values,
    evaluate_field,
    quadrature_points,
    quadrature_rule,
)
from msfem.src.discretization.mesh import Mesh
from msfem.src.potentials.catalog import PotentialSpec
from msfem.src.utils.exceptions import ReferenceNormError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ErrorReport:
    rel_L2: float
    rel_H1: float
    t: float
    method: str = ""
    H: float = float("nan")
    dt: float = float("nan")
    epsilon: float = float("nan")
    basis_dim: int = 0
    rel_density_L2: Optional[float] = None
    rel_energy_density_L2: Optional[float] = None

    def as_row(self) -> dict:
        return asdict(self)


def position_density(fine_psi: np.ndarray) -> np.ndarray:
    return np.abs(fine_psi) ** 2


def energy_density(
    fine_psi: np.ndarray, spec: PotentialSpec, t: float, mesh: Mesh
) -> np.ndarray:
    """Per-element mean of (eps^2/2)|grad psi|^2 + v |psi|^2.

    The gradient term is exact for P1; the potential term uses the same
    quadrature as the potential assembly, so element sums times the element
    measure reproduce the total energy of the assembled operators.
    """
    grads = element_gradients(mesh, fine_psi)
    kinetic = 0.5 * spec.epsilon**2 * np.sum(np.abs(grads) ** 2, axis=1)
    _, weights = quadrature_rule(mesh.dim)
    values = evaluate_field(spec.at_time(t), quadrature_points(mesh))
    psi_q = element_quadrature_values(mesh, fine_psi)
    potential = np.sum(weights * values * np.abs(psi_q) ** 2, axis=1)
    return kinetic + potential


def element_centroids(mesh: Mesh) -> np.ndarray:
    return mesh.element_points.mean(axis=1)


def total_mass(fine_psi: np.ndarray, fine_mass: sp.spmatrix) -> float:
    return float(np.real(np.vdot(fine_psi, fine_mass @ fine_psi)))


def total_energy(fine_psi: np.ndarray, fine_ops: FineOperators, t: float) -> float:
    return float(np.real(np.vdot(fine_psi, fine_ops.hamiltonian(t) @ fine_psi)))


def _quadratic_norm(form: sp.spmatrix, u: np.ndarray) -> float:
    return math.sqrt(max(float(np.real(np.vdot(u, form @ u))), 0.0))


def relative_errors(
    fine_psi_num: np.ndarray,
    fine_psi_ref: np.ndarray,
    fine_stiffness: sp.spmatrix,
    fine_mass: sp.spmatrix,
    t: float = float("nan"),
    method: str = "",
    H: float = float("nan"),
    dt: float = float("nan"),
    epsilon: float = float("nan"),
    basis_dim: int = 0,
) -> ErrorReport:
    """Relative L2 (M form) and unweighted H1 ((S+M) form) errors"""
    diff = fine_psi_num - fine_psi_ref
    h1_form = fine_stiffness + fine_mass
    ref_l2 = _quadratic_norm(fine_mass, fine_psi_ref)
    ref_h1 = _quadratic_norm(h1_form, fine_psi_ref)
    if ref_l2 == 0.0 or ref_h1 == 0.0:
        raise ReferenceNormError("reference solution has zero norm")
    return ErrorReport(
        rel_L2=_quadratic_norm(fine_mass, diff) / ref_l2,
        rel_H1=_quadratic_norm(h1_form, diff) / ref_h1,
        t=t,
        method=method,
        H=H,
        dt=dt,
        epsilon=epsilon,
        basis_dim=basis_dim,
    )


def density_errors(
    fine_psi_num: np.ndarray,
    fine_psi_ref: np.ndarray,
    spec: PotentialSpec,
    t: float,
    mesh: Mesh,
    fine_mass: sp.spmatrix,
) -> Tuple[float, float]:
    """Relative L2 errors of the position density and of the energy density"""
    n_num, n_ref = position_density(fine_psi_num), position_density(fine_psi_ref)
    ref_norm = _quadratic_norm(fine_mass, n_ref)
    e_num = energy_density(fine_psi_num, spec, t, mesh)
    e_ref = energy_density(fine_psi_ref, spec, t, mesh)
    e_ref_norm = math.sqrt(mesh.element_measure * float(np.sum(e_ref**2)))
    if ref_norm == 0.0 or e_ref_norm == 0.0:
        raise ReferenceNormError("reference density has zero norm")
    rel_density = _quadratic_norm(fine_mass, n_num - n_ref) / ref_norm
    rel_energy = math.sqrt(mesh.element_measure * float(np.sum((e_num - e_ref) ** 2))) / e_ref_norm
    return rel_density, rel_energy


def mass_and_energy_trace(
    trajectory: Iterable[Tuple[float, np.ndarray]], fine_ops: FineOperators
) -> pd.DataFrame:
    """Total mass and total energy per recorded fine-grid state"""
    rows = [
        {
            "t": float(t),
            "mass": total_mass(psi, fine_ops.mass),
            "energy": total_energy(psi, fine_ops, float(t)),
        }
        for t, psi in trajectory
    ]
    return pd.DataFrame(rows, columns=["t", "mass", "energy"])
