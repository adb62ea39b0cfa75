"""P1 finite element assembly on uniform periodic meshes."""

import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Tuple

import numpy as np
import scipy.sparse as sp

from msfem.src.discretization.mesh import Mesh
from msfem.src.potentials.catalog import PotentialSpec, ScalarField, potential_bound
from msfem.src.utils.exceptions import NonFiniteValueError

logger = logging.getLogger(__name__)


@lru_cache(maxsize=2)
def quadrature_rule(dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """Barycentric quadrature points and weights (summing to one) per element.

    5-point Gauss-Legendre on intervals, 7-point degree-5 rule on triangles.
    """
    if dim == 1:
        xi, w = np.polynomial.legendre.leggauss(5)
        s = 0.5 * (xi + 1.0)
        return np.stack([1.0 - s, s], axis=1), 0.5 * w
    r15 = np.sqrt(15.0)
    a1, b1 = (9.0 - 2.0 * r15) / 21.0, (6.0 + r15) / 21.0
    a2, b2 = (9.0 + 2.0 * r15) / 21.0, (6.0 - r15) / 21.0
    w1, w2 = (155.0 + r15) / 1200.0, (155.0 - r15) / 1200.0
    points = [[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]
    weights = [0.225]
    for a, b, w in ((a1, b1, w1), (a2, b2, w2)):
        points += [[a, b, b], [b, a, b], [b, b, a]]
        weights += [w, w, w]
    return np.array(points), np.array(weights)


def reference_gradients(mesh: Mesh) -> np.ndarray:
    """Gradients of the barycentric functions per element kind, shape (kinds, dim+1, dim)"""
    local = mesh.local_vertices * mesh.h
    edges = local[:, 1:, :] - local[:, :1, :]
    inv = np.linalg.inv(edges)
    grads = np.transpose(inv, (0, 2, 1))
    first = -grads.sum(axis=1, keepdims=True)
    return np.concatenate([first, grads], axis=1)


def quadrature_points(mesh: Mesh) -> np.ndarray:
    """Physical quadrature points, shape (n_elements, n_q, dim)"""
    lam, _ = quadrature_rule(mesh.dim)
    return np.einsum("qk,ekd->eqd", lam, mesh.element_points)


def evaluate_field(v: ScalarField, points: np.ndarray) -> np.ndarray:
    """Evaluate a field on points of shape (..., dim), broadcasting constants."""
    coords = [points[..., d] for d in range(points.shape[-1])]
    values = np.broadcast_to(np.asarray(v(*coords)), points.shape[:-1])
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError("field evaluation returned non-finite values")
    return values


def _assemble(mesh: Mesh, local: np.ndarray, element_mask: np.ndarray | None = None) -> sp.csr_matrix:
    """Scatter per-element matrices of shape (n_elements, k, k) into a CSR matrix"""
    elements = mesh.elements
    if element_mask is not None:
        elements = elements[element_mask]
        local = local[element_mask]
    k = elements.shape[1]
    rows = np.repeat(elements, k, axis=1).ravel()
    cols = np.tile(elements, (1, k)).ravel()
    matrix = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs))
    return matrix.tocsr()


def assemble_stiffness(mesh: Mesh, element_mask: np.ndarray | None = None) -> sp.csr_matrix:
    """Exact P1 stiffness matrix, optionally restricted to a subset of elements"""
    grads = reference_gradients(mesh)
    per_kind = mesh.element_measure * np.einsum("kid,kjd->kij", grads, grads)
    return _assemble(mesh, per_kind[mesh.element_kind], element_mask)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    k = mesh.dim + 1
    # exact integral of barycentric products: |K| (1 + delta_ij) d! / (d+2)!
    local = (np.ones((k, k)) + np.eye(k)) * mesh.element_measure / ((k) * (k + 1))
    per_element = np.broadcast_to(local, (mesh.n_elements, k, k))
    return _assemble(mesh, per_element)


def assemble_potential(mesh: Mesh, v: ScalarField) -> sp.csr_matrix:
    """Potential-weighted mass matrix by fixed-order quadrature per element"""
    lam, weights = quadrature_rule(mesh.dim)
    values = evaluate_field(v, quadrature_points(mesh))
    local = mesh.element_measure * np.einsum("eq,q,qi,qj->eij", values, weights, lam, lam)
    return _assemble(mesh, local)


def project_function(mesh: Mesh, f: Callable[..., np.ndarray]) -> np.ndarray:
    """Nodal interpolation: coefficient i equals f at vertex i"""
    coords = [mesh.vertices[:, d] for d in range(mesh.dim)]
    values = np.broadcast_to(np.asarray(f(*coords), dtype=complex), (mesh.n_dofs,)).copy()
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError("projected function returned non-finite values")
    return values


def element_gradients(mesh: Mesh, coeffs: np.ndarray) -> np.ndarray:
    """Constant gradient of a P1 function on each element, shape (n_elements, dim)"""
    grads = reference_gradients(mesh)[mesh.element_kind]
    return np.einsum("ek,ekd->ed", coeffs[mesh.elements], grads)


def element_quadrature_values(mesh: Mesh, coeffs: np.ndarray) -> np.ndarray:
    """P1 function values at the quadrature points, shape (n_elements, n_q)"""
    lam, _ = quadrature_rule(mesh.dim)
    return coeffs[mesh.elements] @ lam.T


@dataclass
class FineOperators:
    """Fine-mesh operators of one potential, with the drive kept in affine form"""

    mesh: Mesh
    potential: PotentialSpec
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    v1: sp.csr_matrix
    v2_blocks: Tuple[sp.csr_matrix, ...] = field(default_factory=tuple)

    @classmethod
    def assemble(cls, mesh: Mesh, potential: PotentialSpec) -> "FineOperators":
        if potential.dim != mesh.dim:
            raise ValueError(
                f"potential is {potential.dim}D but mesh is {mesh.dim}D"
            )
        logger.info(
            f"Assembling fine operators: dim={mesh.dim} n={mesh.n_cells_per_side} "
            f"potential={potential.name}"
        )
        return cls(
            mesh=mesh,
            potential=potential,
            stiffness=assemble_stiffness(mesh),
            mass=assemble_mass(mesh),
            v1=assemble_potential(mesh, potential.v1),
            v2_blocks=tuple(assemble_potential(mesh, term.spatial) for term in potential.terms),
        )

    @property
    def epsilon(self) -> float:
        return self.potential.epsilon

    @cached_property
    def v0(self) -> float:
        """Sampled sup of |v1 + v2| over space and one drive period"""
        return potential_bound(self.potential)

    def v2(self, t: float) -> sp.csr_matrix:
        total = sp.csr_matrix(self.mass.shape)
        for block, term in zip(self.v2_blocks, self.potential.terms):
            total = total + float(term.temporal(t)) * block
        return total

    def hamiltonian(self, t: float) -> sp.csr_matrix:
        """(eps^2/2) S + V1 + V2(t)"""
        return 0.5 * self.epsilon**2 * self.stiffness + self.v1 + self.v2(t)
