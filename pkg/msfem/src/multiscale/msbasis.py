"""Multiscale basis functions by constrained energy minimization.

Each basis function minimizes the Hamiltonian energy form over fine P1
functions supported in a nodal patch (or the whole domain), subject to
biorthogonality against the coarse hat functions. The equality constrained
quadratic program is solved through its explicit KKT solution
``c = Q^-1 A^T (A Q^-1 A^T)^-1 b``.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from msfem.src.discretization.fem_assembly import FineOperators, element_gradients
from msfem.src.discretization.mesh import (
    Mesh,
    Patch,
    fine_dofs_in_patch,
    interpolation_matrix,
    nodal_patch,
    parent_elements,
    saturation_level,
)
from msfem.src.potentials.catalog import mesh_condition_ratio
from msfem.src.utils.exceptions import (
    BasisConstructionError,
    IndefiniteOperatorError,
    MsfemError,
    RankDeficientConstraintError,
)

logger = logging.getLogger(__name__)

LStar = Union[int, Literal["global"]]

# Relative pivot size below which the Schur complement is treated as singular
SCHUR_PIVOT_TOL = 1e-13


@dataclass
class KKTSystem:
    """Equality constrained QP ``min 1/2 c^T Q c  s.t.  A c = b`` on active fine dofs.

    ``rho`` weights the augmentation ``rho A^T A`` added to Q before
    factorizing. On the feasible set ``A c = b`` the augmentation is the
    constant ``rho |b|^2``, so the minimizer is unchanged.
    """

    active: np.ndarray
    q: sp.csr_matrix
    a: sp.csr_matrix
    b: np.ndarray
    rows: np.ndarray
    targets: np.ndarray
    n_fine: int
    rho: float = 0.0
    potential_shift: float = 0.0

    @property
    def n_active(self) -> int:
        return int(self.active.size)


@dataclass
class MultiscaleBasis:
    """Basis functions stored as columns of a fine-dof coefficient matrix"""

    coarse_mesh: Mesh
    fine_mesh: Mesh
    coefficients: sp.csc_matrix
    build_time: float
    l_star: LStar
    epsilon: float
    supports: Tuple[Optional[np.ndarray], ...] = ()
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def n_functions(self) -> int:
        return int(self.coefficients.shape[1])

    @property
    def is_global(self) -> bool:
        return all(s is None for s in self.supports)

    def function(self, i: int) -> np.ndarray:
        return self.coefficients[:, i].toarray().ravel()

    def constraint_residual(self, fine_mass: sp.spmatrix) -> float:
        """max |P^T M B - I|: discrete biorthogonality against the coarse hats"""
        p = interpolation_matrix(self.coarse_mesh, self.fine_mesh)
        gram = (p.T @ fine_mass @ self.coefficients).toarray()
        return float(np.max(np.abs(gram - np.eye(gram.shape[0], gram.shape[1]))))


@dataclass
class DecayProfile:
    ratios: np.ndarray
    beta_per_function: np.ndarray
    mean_ratios: np.ndarray
    beta: float


def default_l_star(coarse_n: int) -> int:
    """ceil(log2(1/H)) on the unit domain"""
    return max(1, math.ceil(math.log2(coarse_n)))


def estimate_potential_scale(fine_ops: FineOperators, t: float) -> float:
    """Lumped estimate of max |v| from the diagonals of V and M"""
    v = fine_ops.v1 + fine_ops.v2(t)
    return float(np.max(np.abs(v.diagonal() / fine_ops.mass.diagonal())))


def build_kkt(
    fine_ops: FineOperators,
    coarse_mesh: Mesh,
    t: float,
    patch: Optional[Patch] = None,
    augmentation: float = 4.0,
    potential_shift: float = 0.0,
    hamiltonian: Optional[sp.csr_matrix] = None,
    constraints: Optional[sp.csr_matrix] = None,
    potential_scale: Optional[float] = None,
) -> KKTSystem:
    """Assemble the KKT data of the global (``patch=None``) or localized problem.

    Args:
        fine_ops: fine-mesh operators
        coarse_mesh: mesh carrying the measurement hat functions
        t: time instance whose drive enters Q
        patch: nodal patch of the target vertex, or None for all vertices globally
        augmentation: multiplier of the augmentation weight, see KKTSystem
        potential_shift: explicit uniform shift of the potential (changes the minimizer)
        hamiltonian: precomputed fine Hamiltonian at t, shared across patches
        constraints: precomputed P^T M over all fine dofs, shared across patches
        potential_scale: precomputed estimate_potential_scale at t

    Returns:
        KKTSystem restricted to the active fine dofs
    """
    fine = fine_ops.mesh
    if patch is None:
        active = np.arange(fine.n_dofs)
        targets = np.arange(coarse_mesh.n_dofs)
    else:
        active = fine_dofs_in_patch(fine, coarse_mesh, patch)
        targets = np.array([patch.center_vertex])
    if active.size == 0:
        raise RankDeficientConstraintError(
            "patch has no interior fine dofs; increase l* or refine the fine mesh"
        )

    q_full = hamiltonian if hamiltonian is not None else fine_ops.hamiltonian(t)
    if potential_shift:
        q_full = q_full + potential_shift * fine_ops.mass
    q = q_full[active][:, active].tocsr()

    if constraints is None:
        constraints = (interpolation_matrix(coarse_mesh, fine).T @ fine_ops.mass).tocsr()
    a_full = constraints[:, active]
    rows = np.flatnonzero(np.asarray(abs(a_full).sum(axis=1)).ravel() > 0)
    a = a_full[rows].tocsr()

    positions = np.searchsorted(rows, targets)
    if np.any(positions >= rows.size) or np.any(rows[np.minimum(positions, rows.size - 1)] != targets):
        raise RankDeficientConstraintError("target constraint vanishes on the active dofs")
    b = np.zeros((rows.size, targets.size))
    b[positions, np.arange(targets.size)] = 1.0

    if potential_scale is None:
        potential_scale = estimate_potential_scale(fine_ops, t)
    v_scale = max(potential_scale + abs(potential_shift), 1.0)
    rho = augmentation * v_scale / coarse_mesh.h**coarse_mesh.dim
    return KKTSystem(
        active=active,
        q=q,
        a=a,
        b=b,
        rows=rows,
        targets=targets,
        n_fine=fine.n_dofs,
        rho=rho,
        potential_shift=potential_shift,
    )


class _SymmetricFactor:
    """Cholesky-type factorization that fails on indefinite matrices.

    Dense Cholesky for small systems; otherwise sparse LU in symmetric mode
    with no numerical pivoting, whose pivots are all positive iff the
    matrix is positive definite.
    """

    def __init__(self, matrix: sp.csr_matrix, dense_limit: int) -> None:
        self.dense = matrix.shape[0] <= dense_limit
        try:
            if self.dense:
                self._factor = la.cho_factor(matrix.toarray(), lower=True, check_finite=True)
            else:
                lu = spla.splu(
                    matrix.tocsc(),
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True},
                )
                pivots = lu.U.diagonal()
                if not np.array_equal(lu.perm_r, lu.perm_c) or np.any(pivots <= 0.0):
                    raise la.LinAlgError("non-positive pivot in symmetric factorization")
                self._factor = lu
        except (la.LinAlgError, RuntimeError, ValueError) as e:
            raise IndefiniteOperatorError(str(e)) from e

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.dense:
            return la.cho_solve(self._factor, rhs)
        return self._factor.solve(rhs)


def solve_basis(kkt: KKTSystem, dense_limit: int = 1500, retries: int = 2) -> np.ndarray:
    """Minimizers of the KKT system as full fine-dof vectors, shape (n_fine, n_targets).

    All right-hand sides share one factorization of the augmented Q and one
    Cholesky factorization of the dense Schur complement.
    """
    gram = (kkt.a.T @ kkt.a).tocsr()
    rho = kkt.rho
    factor = None
    for attempt in range(retries + 1):
        try:
            factor = _SymmetricFactor((kkt.q + rho * gram).tocsr(), dense_limit)
            break
        except IndefiniteOperatorError as e:
            if attempt == retries:
                raise IndefiniteOperatorError(
                    f"energy form is not positive definite on the feasible set ({e}); "
                    f"refine the fine mesh h or reduce H so that sqrt(V0)H/eps stays O(1)"
                ) from e
            logger.debug(f"Augmented factorization failed at rho={rho:.3e}, retrying")
            rho *= 16.0
    kkt.rho = rho

    a_dense_t = kkt.a.T.toarray()
    y = factor.solve(a_dense_t)
    schur = kkt.a @ y
    schur = 0.5 * (schur + schur.T)
    try:
        schur_factor = la.cho_factor(schur, lower=True)
    except la.LinAlgError as e:
        raise RankDeficientConstraintError(
            f"singular Schur complement ({e}); the patch is too small, increase l*"
        ) from e
    pivots = np.abs(np.diag(schur_factor[0])) ** 2
    if pivots.min() < SCHUR_PIVOT_TOL * pivots.max():
        raise RankDeficientConstraintError(
            "numerically singular Schur complement; the patch is too small, increase l*"
        )

    coeffs = y @ la.cho_solve(schur_factor, kkt.b)
    full = np.zeros((kkt.n_fine, kkt.targets.size))
    full[kkt.active] = coeffs
    return full


def build_space(
    fine_ops: FineOperators,
    coarse_mesh: Mesh,
    t: float,
    l_star: LStar = "global",
    max_workers: int = 1,
    augmentation: float = 4.0,
    potential_shift: float = 0.0,
    dense_limit: int = 1500,
    c_max: float = 4.0,
) -> MultiscaleBasis:
    """One multiscale basis function per coarse vertex, built with the potential at ``t``.

    Localized functions solve independent problems on Patch(l*) and vanish
    outside it. Once the patch saturates the domain the localized problems
    coincide with the global one, which is then solved in a single pass.
    """
    ratio = mesh_condition_ratio(fine_ops.v0, coarse_mesh.h, fine_ops.epsilon)
    if ratio > c_max:
        logger.warning(
            f"sqrt(V0)H/eps = {ratio:.3f} exceeds {c_max}: basis decay may be poor at H={coarse_mesh.h:.5g}"
        )
    saturated = l_star == "global" or l_star >= saturation_level(coarse_mesh)

    if saturated:
        try:
            coefficients = solve_basis(
                build_kkt(fine_ops, coarse_mesh, t, None, augmentation, potential_shift),
                dense_limit=dense_limit,
            )
        except MsfemError as e:
            raise BasisConstructionError(f"global basis at t={t}: {e}", time=t) from e
        matrix = sp.csc_matrix(coefficients)
        supports: Tuple[Optional[np.ndarray], ...] = (None,) * coarse_mesh.n_dofs
    else:
        level = int(l_star)
        hamiltonian = fine_ops.hamiltonian(t)
        constraints = (interpolation_matrix(coarse_mesh, fine_ops.mesh).T @ fine_ops.mass).tocsr()
        scale = estimate_potential_scale(fine_ops, t)

        def solve_vertex(vertex: int) -> Tuple[np.ndarray, np.ndarray]:
            patch = nodal_patch(coarse_mesh, vertex, level)
            try:
                kkt = build_kkt(
                    fine_ops,
                    coarse_mesh,
                    t,
                    patch,
                    augmentation,
                    potential_shift,
                    hamiltonian=hamiltonian,
                    constraints=constraints,
                    potential_scale=scale,
                )
                column = solve_basis(kkt, dense_limit=dense_limit)[:, 0]
            except MsfemError as e:
                raise BasisConstructionError(
                    f"vertex {vertex} at t={t}: {e}", vertex=vertex, time=t
                ) from e
            return kkt.active, column[kkt.active]

        # fill shared caches before workers read them
        coarse_mesh.incidence
        fine_dofs_in_patch(fine_ops.mesh, coarse_mesh, nodal_patch(coarse_mesh, 0, level))
        vertices = range(coarse_mesh.n_dofs)
        if max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                results = list(pool.map(solve_vertex, vertices))
        else:
            results = [solve_vertex(v) for v in vertices]

        rows = np.concatenate([active for active, _ in results])
        cols = np.concatenate([np.full(active.size, v) for v, (active, _) in enumerate(results)])
        vals = np.concatenate([values for _, values in results])
        matrix = sp.csc_matrix(
            (vals, (rows, cols)), shape=(fine_ops.mesh.n_dofs, coarse_mesh.n_dofs)
        )
        supports = tuple(active for active, _ in results)

    logger.info(
        f"Built {coarse_mesh.n_dofs} basis functions at t={t} (l*={l_star}, H={coarse_mesh.h:.5g})"
    )
    return MultiscaleBasis(
        coarse_mesh=coarse_mesh,
        fine_mesh=fine_ops.mesh,
        coefficients=matrix,
        build_time=float(t),
        l_star=l_star,
        epsilon=fine_ops.epsilon,
        supports=supports,
        diagnostics={"mesh_condition_ratio": ratio},
    )


def _fit_beta(levels: np.ndarray, ratios: np.ndarray) -> float:
    usable = ratios > 1e-14
    if usable.sum() < 2:
        return float("nan")
    slope = np.polyfit(levels[usable], np.log(ratios[usable]), 1)[0]
    return float(np.exp(slope))


def decay_profile(
    basis: MultiscaleBasis, fine_stiffness: sp.spmatrix, max_level: int
) -> DecayProfile:
    """Energy of each function outside Patch(l) relative to its total energy.

    The complement energy sums exact per-element gradient energies over the
    fine elements whose parent coarse element lies outside the patch.
    """
    if not basis.is_global:
        logger.warning("decay_profile measures truncated functions; build the basis globally")
    coarse, fine = basis.coarse_mesh, basis.fine_mesh
    parent = parent_elements(coarse, fine)
    levels = np.arange(max_level + 1)
    ratios = np.zeros((basis.n_functions, levels.size))
    for i in range(basis.n_functions):
        phi = basis.function(i)
        total = float(phi @ (fine_stiffness @ phi))
        grads = element_gradients(fine, phi)
        energies = fine.element_measure * np.sum(grads**2, axis=1)
        for level in levels:
            inside = nodal_patch(coarse, i, int(level)).element_mask(coarse)
            outside = energies[~inside[parent]].sum()
            ratios[i, level] = math.sqrt(max(outside, 0.0) / total) if total > 0 else 0.0

    per_function = np.array([_fit_beta(levels, r) for r in ratios])
    with np.errstate(divide="ignore"):
        mean_ratios = np.exp(np.mean(np.log(np.maximum(ratios, 1e-300)), axis=0))
    return DecayProfile(
        ratios=ratios,
        beta_per_function=per_function,
        mean_ratios=mean_ratios,
        beta=_fit_beta(levels, mean_ratios),
    )


def localization_errors(
    fine_ops: FineOperators,
    coarse_mesh: Mesh,
    t: float,
    levels: Sequence[int],
    norm: Optional[sp.spmatrix] = None,
) -> List[float]:
    """Max over functions of ||phi_loc(l) - phi_global|| in the (S + M) norm, per level"""
    norm = norm if norm is not None else (fine_ops.stiffness + fine_ops.mass)
    reference = build_space(fine_ops, coarse_mesh, t, "global").coefficients.toarray()
    errors = []
    for level in levels:
        local = build_space(fine_ops, coarse_mesh, t, int(level)).coefficients.toarray()
        diff = local - reference
        errors.append(float(np.sqrt(np.max(np.einsum("ij,ij->j", diff, norm @ diff)))))
    return errors
