"""Reference solutions (fine FEM or En-MsFEM) with an on-disk cache, and the
coarse standard-FEM baseline."""

import hashlib
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Dict, Literal, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from msfem.src.data_access.db_schema.cache_entry import ReferenceCacheEntry
from msfem.src.data_access.repository import ReferenceCacheRepository
from msfem.src.discretization.fem_assembly import FineOperators, project_function
from msfem.src.discretization.mesh import Mesh, build_mesh, interpolation_matrix
from msfem.src.dynamics.evolution import (
    DEFAULT_DENSE_THRESHOLD,
    Observer,
    WaveState,
    evolve,
    project_initial_to_basis,
    project_system,
    step_count,
)
from msfem.src.dynamics.observables import total_mass
from msfem.src.multiscale.enrichment import build_enriched_space
from msfem.src.multiscale.msbasis import default_l_star
from msfem.src.potentials.catalog import PotentialSpec, gaussian_packet
from msfem.src.utils.exceptions import CacheCorruptionError, EvolutionError
from msfem.src.utils.timing import timed_stage

logger = logging.getLogger(__name__)

ReferenceMethod = Literal["fem", "enmsfem"]


@dataclass
class ReferenceSolution:
    mesh: Mesh
    times: np.ndarray
    states: np.ndarray
    key: str = ""
    self_convergence: Optional[float] = None
    from_cache: bool = False
    operators: Optional[FineOperators] = None

    def state_at(self, t: float, tol: float = 1e-9) -> np.ndarray:
        matches = np.flatnonzero(np.abs(self.times - t) <= tol)
        if matches.size == 0:
            raise KeyError(f"time {t} was not recorded")
        return self.states[matches[0]]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def prolong(fine_psi: np.ndarray, source: Mesh, target: Mesh) -> np.ndarray:
    """Exact piecewise-linear embedding of a P1 function into a nested finer mesh"""
    if source == target:
        return fine_psi
    return interpolation_matrix(source, target) @ fine_psi


def normalized_record_times(
    record_times: Sequence[float], t0: float, t_final: float, dt: float
) -> np.ndarray:
    """Sorted unique record times, always including t_final, validated against dt"""
    times = sorted({round(float(t), 12) for t in record_times} | {round(float(t_final), 12)})
    for t in times:
        step_count(t0, t, dt)
    return np.array(times)


def reference_key(
    spec: PotentialSpec,
    fine_n: int,
    dt: float,
    t_final: float,
    record_times: Sequence[float],
    t0: float = 0.0,
    method: ReferenceMethod = "fem",
    extra: Optional[Dict] = None,
) -> str:
    payload = {
        "example": spec.example_id if spec.example_id is not None else spec.name,
        "name": spec.name,
        "source": spec.source,
        "epsilon": spec.epsilon,
        "e0": spec.e0,
        "parameters": spec.parameters,
        "fine_n": fine_n,
        "dt": dt,
        "t0": t0,
        "t_final": t_final,
        "record_times": [float(t) for t in record_times],
        "method": method,
        "extra": extra or {},
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:32]


def run_and_record(
    fine_ops: FineOperators,
    basis: Optional[sp.spmatrix],
    dt: float,
    t0: float,
    t_final: float,
    times: np.ndarray,
    observers: Sequence[Observer] = (),
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD,
) -> np.ndarray:
    """Evolve the Gaussian packet in span(basis) and return fine-grid states at ``times``"""
    mesh = fine_ops.mesh
    psi0 = project_function(mesh, gaussian_packet(mesh.dim))
    system = project_system(fine_ops, basis, dense_threshold=dense_threshold)
    state0 = project_initial_to_basis(psi0, basis, fine_ops.mass, t0=t0)
    wanted = {step_count(t0, t, dt): i for i, t in enumerate(times)}
    states = np.zeros((times.size, mesh.n_dofs), dtype=complex)

    def record(step: int, state: WaveState, fine_psi: np.ndarray) -> None:
        states[wanted[step]] = fine_psi

    evolve(system, state0, dt, t_final, [Observer(record, steps=frozenset(wanted)), *observers])
    return states


def _compute(
    spec: PotentialSpec,
    fine_n: int,
    dt: float,
    t_final: float,
    times: np.ndarray,
    t0: float,
    method: ReferenceMethod,
    coarse_n: Optional[int],
    l_star: Optional[int],
    keep_fraction: Optional[float],
    max_workers: int,
) -> np.ndarray:
    mesh = build_mesh(spec.dim, fine_n)
    fine_ops = FineOperators.assemble(mesh, spec)
    basis = None
    if method == "enmsfem":
        if coarse_n is None:
            raise ValueError("an En-MsFEM reference needs coarse_n")
        coarse = build_mesh(spec.dim, coarse_n)
        space, _ = build_enriched_space(
            fine_ops,
            coarse,
            l_star if l_star is not None else default_l_star(coarse_n),
            keep_fraction if keep_fraction is not None else (0.125 if spec.dim == 1 else 0.0625),
            t0=t0,
            max_workers=max_workers,
        )
        basis = space.coefficients
    return run_and_record(fine_ops, basis, dt, t0, t_final, times)


def solve_reference(
    spec: PotentialSpec,
    fine_n: int,
    dt: float,
    t_final: float,
    record_times: Sequence[float] = (),
    t0: float = 0.0,
    repository: Optional[ReferenceCacheRepository] = None,
    self_convergence: bool = False,
    method: ReferenceMethod = "fem",
    coarse_n: Optional[int] = None,
    l_star: Optional[int] = None,
    keep_fraction: Optional[float] = None,
    max_workers: int = 1,
) -> ReferenceSolution:
    """Fine-mesh reference states at the requested times, cached by parameters.

    A corrupted cache payload is discarded and recomputed. With
    ``self_convergence`` the run is repeated at (2 fine_n, dt/2) and the
    relative L2 difference at t_final is stored with the entry.
    """
    times = normalized_record_times(record_times, t0, t_final, dt)
    extra = {"coarse_n": coarse_n, "l_star": l_star, "keep_fraction": keep_fraction}
    key = reference_key(spec, fine_n, dt, t_final, times, t0, method, extra)
    mesh = build_mesh(spec.dim, fine_n)

    if repository is not None:
        entry = repository.get_entry(key)
        if entry is not None:
            try:
                arrays, _ = repository.read_payload(entry)
                logger.info(f"Reference cache hit {key}")
                return ReferenceSolution(
                    mesh=mesh,
                    times=arrays["times"],
                    states=arrays["states"],
                    key=key,
                    self_convergence=entry.self_convergence,
                    from_cache=True,
                )
            except CacheCorruptionError as e:
                logger.warning(f"Discarding corrupted reference cache entry {key}: {e}")
                repository.delete_entry(key)

    with timed_stage(f"reference {method} n={fine_n} dt={dt:.3e}", logger):
        states = _compute(
            spec, fine_n, dt, t_final, times, t0, method, coarse_n, l_star, keep_fraction, max_workers
        )

    margin = None
    if self_convergence:
        finer = build_mesh(spec.dim, 2 * fine_n)
        with timed_stage(f"reference self-convergence n={2 * fine_n} dt={dt / 2:.3e}", logger):
            finer_final = _compute(
                spec,
                2 * fine_n,
                0.5 * dt,
                t_final,
                times[-1:],
                t0,
                method,
                coarse_n,
                l_star,
                keep_fraction,
                max_workers,
            )[-1]
        mass_finer = FineOperators.assemble(finer, spec).mass
        diff = prolong(states[-1], mesh, finer) - finer_final
        margin = float(np.sqrt(total_mass(diff, mass_finer) / total_mass(finer_final, mass_finer)))
        logger.info(f"Reference self-convergence margin {margin:.3e}")

    if not np.all(np.isfinite(states)):
        raise EvolutionError("reference solution contains non-finite values")

    if repository is not None:
        header = {"key": key, "method": method, "fine_n": fine_n, "dt": dt, "t_final": t_final}
        path, checksum = repository.write_payload(key, {"times": times, "states": states}, header)
        repository.add_entry(
            ReferenceCacheEntry(
                key=key,
                example=str(spec.example_id if spec.example_id is not None else spec.name),
                method=method,
                epsilon=spec.epsilon,
                e0=spec.e0,
                fine_n=fine_n,
                dt=dt,
                t_final=t_final,
                record_times=json.dumps(times.tolist()),
                payload_path=str(path),
                checksum=checksum,
                self_convergence=margin,
                created_at=datetime.now(timezone.utc).isoformat(),
            )
        )
    return ReferenceSolution(mesh=mesh, times=times, states=states, key=key, self_convergence=margin)


def solve_standard_fem_coarse(
    spec: PotentialSpec,
    coarse_n: int,
    dt: float,
    t_final: float,
    record_times: Sequence[float] = (),
    t0: float = 0.0,
    observers: Sequence[Observer] = (),
    dense_threshold: int = DEFAULT_DENSE_THRESHOLD,
) -> ReferenceSolution:
    """Plain P1 FEM on the coarse mesh, the baseline of the error studies.

    The assembled coarse operators are returned on ``operators``.
    """
    times = normalized_record_times(record_times, t0, t_final, dt)
    mesh = build_mesh(spec.dim, coarse_n)
    fine_ops = FineOperators.assemble(mesh, spec)
    states = run_and_record(
        fine_ops, None, dt, t0, t_final, times, observers, dense_threshold=dense_threshold
    )
    return ReferenceSolution(mesh=mesh, times=times, states=states, operators=fine_ops)
