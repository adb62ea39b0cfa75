"""Galerkin projection onto a basis and Crank-Nicolson time stepping."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from msfem.src.discretization.fem_assembly import FineOperators
from msfem.src.potentials.catalog import TimeFactor
from msfem.src.utils.exceptions import DegenerateBasisError, EvolutionError

logger = logging.getLogger(__name__)

Matrix = Union[np.ndarray, sp.spmatrix]

DEFAULT_DENSE_THRESHOLD = 2048
DEFAULT_OBSERVER_STRIDE = 64


@dataclass
class CoarseSystem:
    mass: Matrix
    stiffness: Matrix
    v1: Matrix
    v2_blocks: Tuple[Matrix, ...]
    s_fns: Tuple[TimeFactor, ...]
    epsilon: float
    basis: Optional[sp.csc_matrix] = None

    @property
    def basis_dim(self) -> int:
        return int(self.mass.shape[0])

    @property
    def dense(self) -> bool:
        return isinstance(self.mass, np.ndarray)

    @property
    def time_dependent(self) -> bool:
        return len(self.v2_blocks) > 0

    def hamiltonian(self, t: float) -> Matrix:
        """(eps^2/2) S + V1 + sum_n s_n(t) V2_n"""
        total = 0.5 * self.epsilon**2 * self.stiffness + self.v1
        for block, s in zip(self.v2_blocks, self.s_fns):
            total = total + float(s(t)) * block
        return total

    def reconstruct(self, coeffs: np.ndarray) -> np.ndarray:
        """Fine-grid wavefunction sum_i c_i phi_i"""
        if self.basis is None:
            return coeffs
        return self.basis @ coeffs


@dataclass
class WaveState:
    coeffs: np.ndarray
    t: float


@dataclass
class Observer:
    """Callback ``(step, state, fine_psi)`` run every ``stride`` steps or at given steps"""

    callback: Callable[[int, WaveState, np.ndarray], None]
    stride: int = DEFAULT_OBSERVER_STRIDE
    steps: Optional[frozenset] = None

    def due(self, step: int, n_steps: int) -> bool:
        if self.steps is not None:
            return step in self.steps
        return step % self.stride == 0 or step == n_steps


@dataclass
class Trajectory:
    final: WaveState
    snapshots: List[WaveState] = field(default_factory=list)
    n_steps: int = 0


def _symmetric(matrix: Matrix) -> Matrix:
    return 0.5 * (matrix + matrix.T)


def _congruence(basis: sp.csc_matrix, matrix: sp.spmatrix, dense: bool) -> Matrix:
    projected = _symmetric((basis.T @ matrix @ basis))
    if dense:
        return projected.toarray() if sp.issparse(projected) else np.asarray(projected)
    return sp.csr_matrix(projected)


def _check_positive_definite(mass: Matrix) -> None:
    try:
        if isinstance(mass, np.ndarray):
            la.cholesky(mass, lower=True)
        else:
            lu = spla.splu(
                sp.csc_matrix(mass),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
            if np.any(lu.U.diagonal() <= 0.0):
                raise la.LinAlgError("non-positive pivot")
    except (la.LinAlgError, RuntimeError) as e:
        raise DegenerateBasisError(
            f"projected mass matrix is not positive definite ({e}); "
            "post-processing kept nearly dependent functions"
        ) from e


def project_system(
    fine_ops: FineOperators,
    basis: Optional[sp.spmatrix] = None,
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD,
) -> CoarseSystem:
    """Congruence transforms B^T X B of the fine operators.

    ``basis=None`` is the fine-identity basis: the fine system itself.
    """
    spec = fine_ops.potential
    s_fns = tuple(term.temporal for term in spec.terms)
    if basis is None:
        return CoarseSystem(
            mass=fine_ops.mass,
            stiffness=fine_ops.stiffness,
            v1=fine_ops.v1,
            v2_blocks=tuple(fine_ops.v2_blocks),
            s_fns=s_fns,
            epsilon=spec.epsilon,
        )
    basis = sp.csc_matrix(basis)
    dense = basis.shape[1] <= dense_threshold
    mass = _congruence(basis, fine_ops.mass, dense)
    _check_positive_definite(mass)
    return CoarseSystem(
        mass=mass,
        stiffness=_congruence(basis, fine_ops.stiffness, dense),
        v1=_congruence(basis, fine_ops.v1, dense),
        v2_blocks=tuple(_congruence(basis, block, dense) for block in fine_ops.v2_blocks),
        s_fns=s_fns,
        epsilon=spec.epsilon,
        basis=basis,
    )


class CrankNicolsonStepper:
    """Solves (i eps M - dt/2 H(t_mid)) c+ = (i eps M + dt/2 H(t_mid)) c.

    The midpoint is t + dt/2, so a step of -dt from t + dt reuses the same
    midpoint Hamiltonian. Factorizations are cached across steps when the
    Hamiltonian has no time-dependent terms.
    """

    def __init__(self, system: CoarseSystem) -> None:
        self.system = system
        self._cache: Dict[float, Tuple[object, Matrix]] = {}

    def _factorize(self, left: Matrix) -> object:
        if self.system.dense:
            return la.lu_factor(left, check_finite=False)
        return spla.splu(sp.csc_matrix(left))

    def _solve(self, factor: object, rhs: np.ndarray) -> np.ndarray:
        if self.system.dense:
            return la.lu_solve(factor, rhs, check_finite=False)
        return factor.solve(rhs)

    def step(self, state: WaveState, dt: float) -> WaveState:
        if dt == 0.0:
            raise ValueError("dt must be non-zero")
        sys = self.system
        t_mid = state.t + 0.5 * dt
        cached = None if sys.time_dependent else self._cache.get(dt)
        if cached is None:
            h = sys.hamiltonian(t_mid)
            lhs_mass = 1j * sys.epsilon * sys.mass
            left = lhs_mass - 0.5 * dt * h
            right = lhs_mass + 0.5 * dt * h
            try:
                factor = self._factorize(left)
            except (la.LinAlgError, RuntimeError, ValueError) as e:
                raise EvolutionError(f"Crank-Nicolson factorization failed: {e}") from e
            cached = (factor, right)
            if not sys.time_dependent:
                self._cache[dt] = cached
        factor, right = cached
        coeffs = self._solve(factor, right @ state.coeffs)
        if not np.all(np.isfinite(coeffs)):
            raise EvolutionError("non-finite coefficients after Crank-Nicolson step")
        return WaveState(coeffs=coeffs, t=state.t + dt)


def cn_step(system: CoarseSystem, state: WaveState, dt: float) -> WaveState:
    return CrankNicolsonStepper(system).step(state, dt)


def step_count(t0: float, t_final: float, dt: float, tol: float = 1e-9) -> int:
    n = round((t_final - t0) / dt)
    if n < 0 or abs(n * dt - (t_final - t0)) > tol:
        raise EvolutionError(f"(T - t0)/dt = {(t_final - t0) / dt} is not a non-negative integer")
    return int(n)


def evolve(
    system: CoarseSystem,
    psi0: WaveState,
    dt: float,
    t_final: float,
    observers: Sequence[Observer] = (),
    keep_snapshots: bool = False,
) -> Trajectory:
    """Repeated Crank-Nicolson steps from psi0.t to t_final.

    Observers receive the reconstructed fine-grid state; it is only computed
    on steps where some observer is due. Times are t0 + k dt to avoid drift.
    """
    n_steps = step_count(psi0.t, t_final, dt)
    stepper = CrankNicolsonStepper(system)
    state = psi0
    snapshots: List[WaveState] = []

    def notify(step: int, current: WaveState) -> None:
        due = [o for o in observers if o.due(step, n_steps)]
        if due:
            fine_psi = system.reconstruct(current.coeffs)
            for observer in due:
                observer.callback(step, current, fine_psi)
        if keep_snapshots:
            snapshots.append(current)

    notify(0, state)
    for k in range(1, n_steps + 1):
        try:
            state = stepper.step(state, dt)
        except EvolutionError as e:
            raise EvolutionError(f"step {k}: {e}", step=k) from e
        state = WaveState(coeffs=state.coeffs, t=psi0.t + k * dt)
        notify(k, state)
    if n_steps:
        logger.debug(f"Evolved {n_steps} steps of dt={dt:.3e} (basis_dim={system.basis_dim})")
    return Trajectory(final=state, snapshots=snapshots, n_steps=n_steps)


def project_initial_to_basis(
    fine_psi0: np.ndarray,
    basis: Optional[sp.spmatrix],
    fine_mass: sp.spmatrix,
    t0: float = 0.0,
) -> WaveState:
    """L2-optimal coefficients: (B^T M B) c = B^T M psi0"""
    psi0 = np.asarray(fine_psi0, dtype=complex)
    if basis is None:
        return WaveState(coeffs=psi0.copy(), t=t0)
    basis = sp.csc_matrix(basis)
    gram = _symmetric(basis.T @ fine_mass @ basis)
    rhs = basis.T @ (fine_mass @ psi0)
    try:
        if gram.shape[0] <= DEFAULT_DENSE_THRESHOLD:
            coeffs = la.cho_solve(la.cho_factor(gram.toarray(), lower=True), rhs)
        else:
            _check_positive_definite(sp.csr_matrix(gram))
            coeffs = spla.spsolve(sp.csc_matrix(gram), rhs)
    except la.LinAlgError as e:
        raise DegenerateBasisError(f"projected mass matrix is not positive definite ({e})") from e
    return WaveState(coeffs=np.asarray(coeffs, dtype=complex), t=t0)


def scalar_cayley_factor(lam: float, epsilon: float, dt: float) -> complex:
    """One Crank-Nicolson step of i eps c' = lam c"""
    return (1j * epsilon + 0.5 * dt * lam) / (1j * epsilon - 0.5 * dt * lam)
