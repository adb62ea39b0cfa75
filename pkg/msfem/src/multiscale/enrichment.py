"""Greedy snapshot selection of the drive and enrichment of the multiscale space."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from msfem.src.discretization.fem_assembly import FineOperators
from msfem.src.discretization.mesh import Mesh
from msfem.src.multiscale.msbasis import LStar, MultiscaleBasis, build_space
from msfem.src.potentials.catalog import PotentialSpec, default_grid_n, sampling_grid
from msfem.src.utils.exceptions import BasisConstructionError, MsfemError

logger = logging.getLogger(__name__)

EnrichmentMode = Literal["none", "one_step", "greedy"]

# Relative tolerance under which two sup-norm scores count as a tie
TIE_RTOL = 1e-12


@dataclass
class SnapshotSet:
    times: np.ndarray
    selected: List[float]
    remaining: List[float]
    delta: float

    @property
    def t0(self) -> float:
        return float(self.times[0])


@dataclass
class EnrichmentBlock:
    build_time: float
    source: Optional[MultiscaleBasis]
    kept_indices: np.ndarray
    functions: np.ndarray

    @property
    def kept_count(self) -> int:
        return int(self.functions.shape[1])


@dataclass
class EnrichedSpace:
    """V^H built at t0 followed by reduced enrichment blocks"""

    base: MultiscaleBasis
    blocks: List[EnrichmentBlock] = field(default_factory=list)
    gram_condition: Optional[float] = None

    @property
    def kept_counts(self) -> List[int]:
        return [block.kept_count for block in self.blocks]

    @property
    def dimension(self) -> int:
        return self.base.n_functions + sum(self.kept_counts)

    @property
    def coefficients(self) -> sp.csc_matrix:
        if not self.blocks:
            return self.base.coefficients
        enriched = [sp.csc_matrix(block.functions) for block in self.blocks]
        return sp.hstack([self.base.coefficients, *enriched], format="csc")

    def block_manifest(self) -> List[dict]:
        return [
            {
                "build_time": block.build_time,
                "kept_indices": block.kept_indices.tolist(),
                "kept_count": block.kept_count,
            }
            for block in self.blocks
        ]


@dataclass
class ContinuityProbe:
    phi_distance: float
    v2_distance: float

    @property
    def ratio(self) -> float:
        return self.phi_distance / self.v2_distance if self.v2_distance > 0 else float("nan")


def snapshot_times(spec: PotentialSpec, t0: float = 0.0, n_snapshots: int = 64) -> np.ndarray:
    """t0 < t1 < ... < t_Nt covering one drive period"""
    return t0 + spec.period * np.arange(n_snapshots + 1) / n_snapshots


def _drive_samples(spec: PotentialSpec, times: Sequence[float], grid_n: int) -> np.ndarray:
    coords = sampling_grid(spec.dim, grid_n)
    return np.stack([np.ravel(spec.v2(float(t), *coords)) for t in times])


def _argmax_smallest_time(scores: np.ndarray, times: np.ndarray) -> int:
    best = scores.max()
    tied = np.flatnonzero(scores >= best - TIE_RTOL * abs(best))
    return int(tied[np.argmin(times[tied])])


def greedy_select(
    spec: PotentialSpec,
    times: Sequence[float],
    delta: Optional[float] = None,
    grid_n: Optional[int] = None,
    max_selections: Optional[int] = None,
) -> SnapshotSet:
    """Greedy choice of drive snapshots by sup-norm novelty.

    The first pick maximizes ||v2(., t_l)|| over l > 0. Each further pick
    maximizes the distance to the closest selected snapshot, until every
    remaining snapshot lies within ``delta`` of a selected one. Ties go to
    the smallest time.

    Args:
        spec: potential providing v2
        times: increasing time instances t0 < ... < t_Nt
        delta: stopping threshold, defaults to 0.1 * max_l ||v2(., t_l)||
        grid_n: sampling points per side for the sup norms
        max_selections: optional cap on the number of picks (1 = one-step enrichment)
    """
    times_arr = np.asarray(times, dtype=float)
    if times_arr.size < 2:
        raise ValueError("greedy selection needs at least t0 and one later instance")
    samples = _drive_samples(spec, times_arr, grid_n or default_grid_n(spec.dim))
    norms = np.max(np.abs(samples), axis=1)
    if delta is None:
        delta = 0.1 * float(norms.max())
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")

    candidates = np.arange(1, times_arr.size)
    first = int(candidates[_argmax_smallest_time(norms[candidates], times_arr[candidates])])
    selected = [first]
    remaining = [i for i in range(times_arr.size) if i != first]
    # distance of every instance to its closest selected instance
    closest = np.max(np.abs(samples - samples[first]), axis=1)

    while remaining and (max_selections is None or len(selected) < max_selections):
        rem = np.array(remaining)
        scores = closest[rem]
        if scores.max() <= delta:
            break
        pick = int(rem[_argmax_smallest_time(scores, times_arr[rem])])
        selected.append(pick)
        remaining.remove(pick)
        closest = np.minimum(closest, np.max(np.abs(samples - samples[pick]), axis=1))

    logger.info(
        f"Greedy selection picked {len(selected)} snapshot(s) with delta={delta:.4g}: "
        f"{[float(times_arr[i]) for i in selected]}"
    )
    return SnapshotSet(
        times=times_arr,
        selected=[float(times_arr[i]) for i in selected],
        remaining=[float(times_arr[i]) for i in remaining],
        delta=float(delta),
    )


def empty_selection(times: Sequence[float]) -> SnapshotSet:
    times_arr = np.asarray(times, dtype=float)
    return SnapshotSet(times=times_arr, selected=[], remaining=times_arr.tolist(), delta=float("inf"))


def _mass_projection_residual(
    base: sp.csc_matrix, gram_factor: Tuple, fine_mass: sp.spmatrix, functions: np.ndarray
) -> np.ndarray:
    coeffs = la.cho_solve(gram_factor, base.T @ (fine_mass @ functions))
    return functions - base @ coeffs


def _mass_norms(fine_mass: sp.spmatrix, functions: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(np.einsum("ij,ij->j", functions, fine_mass @ functions), 0.0))


def enrich(
    fine_ops: FineOperators,
    coarse_mesh: Mesh,
    snapshot: SnapshotSet,
    l_star: LStar,
    keep_fraction: float,
    max_workers: int = 1,
    base: Optional[MultiscaleBasis] = None,
    **build_options,
) -> EnrichedSpace:
    """Build V^H at t0 and one reduced block per selected snapshot.

    Each block keeps the ceil(keep_fraction * N_H) candidates with the largest
    M-norm residual after M-projection onto V^H.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    if base is None:
        base = build_space(
            fine_ops, coarse_mesh, snapshot.t0, l_star, max_workers=max_workers, **build_options
        )
    if not snapshot.selected:
        return EnrichedSpace(base=base)

    def build_block(t: float) -> MultiscaleBasis:
        try:
            return build_space(fine_ops, coarse_mesh, t, l_star, max_workers=1, **build_options)
        except MsfemError as e:
            raise BasisConstructionError(f"enrichment at t={t}: {e}", time=t) from e

    with ThreadPoolExecutor(max_workers=max(1, min(max_workers, len(snapshot.selected)))) as pool:
        sources = list(pool.map(build_block, snapshot.selected))

    mass = fine_ops.mass
    base_coeffs = base.coefficients
    gram_factor = la.cho_factor((base_coeffs.T @ mass @ base_coeffs).toarray(), lower=True)
    n_keep = math.ceil(keep_fraction * coarse_mesh.n_dofs)
    blocks = []
    for t, source in zip(snapshot.selected, sources):
        candidates = source.coefficients.toarray()
        residual = _mass_projection_residual(base_coeffs, gram_factor, mass, candidates)
        scores = _mass_norms(mass, residual)
        order = np.argsort(-scores, kind="stable")[:n_keep]
        kept = np.sort(order)
        blocks.append(
            EnrichmentBlock(
                build_time=float(t), source=source, kept_indices=kept, functions=candidates[:, kept]
            )
        )
        logger.info(f"Enrichment block at t={t}: kept {kept.size} of {source.n_functions}")
    return EnrichedSpace(base=base, blocks=blocks)


def postprocess(
    space: EnrichedSpace,
    fine_mass: sp.spmatrix,
    drop_tol: float = 1e-8,
    gram_condition_max: float = 1e12,
) -> EnrichedSpace:
    """Modified Gram-Schmidt of the enrichment functions in the fine L2 product.

    Each function is M-orthogonalized against V^H (exact projection through the
    V^H Gram system, applied twice) and then against every previously kept
    enrichment function, and normalized. Functions whose norm drops below
    ``drop_tol`` times their original norm are discarded. V^H is untouched.
    """
    if not space.blocks:
        return space
    base_coeffs = space.base.coefficients
    gram_factor = la.cho_factor((base_coeffs.T @ fine_mass @ base_coeffs).toarray(), lower=True)
    kept: List[np.ndarray] = []
    new_blocks = []
    for block in space.blocks:
        block_functions, block_indices = [], []
        for index, f in zip(block.kept_indices, block.functions.T):
            original = float(np.sqrt(max(f @ (fine_mass @ f), 0.0)))
            if original == 0.0:
                continue
            v = f.copy()
            for _ in range(2):
                v = _mass_projection_residual(base_coeffs, gram_factor, fine_mass, v[:, None])[:, 0]
                for q in kept:
                    v = v - (q @ (fine_mass @ v)) * q
            norm = float(np.sqrt(max(v @ (fine_mass @ v), 0.0)))
            if norm < drop_tol * original:
                continue
            q_new = v / norm
            kept.append(q_new)
            block_functions.append(q_new)
            block_indices.append(index)
        functions = (
            np.stack(block_functions, axis=1)
            if block_functions
            else np.zeros((fine_mass.shape[0], 0))
        )
        dropped = block.kept_count - len(block_functions)
        if dropped:
            logger.info(f"Post-processing dropped {dropped} dependent function(s) at t={block.build_time}")
        new_blocks.append(
            EnrichmentBlock(
                build_time=block.build_time,
                source=block.source,
                kept_indices=np.array(block_indices, dtype=np.int64),
                functions=functions,
            )
        )
    result = EnrichedSpace(base=space.base, blocks=[b for b in new_blocks if b.kept_count > 0])
    coeffs = result.coefficients
    gram = (coeffs.T @ fine_mass @ coeffs).toarray()
    result.gram_condition = float(np.linalg.cond(gram))
    if result.gram_condition > gram_condition_max:
        logger.warning(
            f"Enriched Gram matrix condition {result.gram_condition:.3e} exceeds {gram_condition_max:.1e}"
        )
    return result


def build_enriched_space(
    fine_ops: FineOperators,
    coarse_mesh: Mesh,
    l_star: LStar,
    keep_fraction: float,
    mode: EnrichmentMode = "one_step",
    t0: float = 0.0,
    delta: Optional[float] = None,
    n_snapshots: int = 64,
    drop_tol: float = 1e-8,
    gram_condition_max: float = 1e12,
    max_workers: int = 1,
    base: Optional[MultiscaleBasis] = None,
    **build_options,
) -> Tuple[EnrichedSpace, SnapshotSet]:
    """Snapshot selection, enrichment and post-processing in one call"""
    times = snapshot_times(fine_ops.potential, t0, n_snapshots)
    if mode == "none":
        snapshot = empty_selection(times)
    else:
        snapshot = greedy_select(
            fine_ops.potential,
            times,
            delta=delta,
            max_selections=1 if mode == "one_step" else None,
        )
    space = enrich(
        fine_ops,
        coarse_mesh,
        snapshot,
        l_star,
        keep_fraction,
        max_workers=max_workers,
        base=base,
        **build_options,
    )
    return postprocess(space, fine_ops.mass, drop_tol, gram_condition_max), snapshot


def continuity_probe(
    fine_ops: FineOperators,
    coarse_mesh: Mesh,
    t1: float,
    t2: float,
    l_star: LStar = "global",
    grid_n: Optional[int] = None,
    **build_options,
) -> ContinuityProbe:
    """Max-norm distance between the bases at t1 and t2 and between the drives"""
    spec = fine_ops.potential
    if t1 == t2:
        return ContinuityProbe(phi_distance=0.0, v2_distance=0.0)
    phi1 = build_space(fine_ops, coarse_mesh, t1, l_star, **build_options).coefficients
    phi2 = build_space(fine_ops, coarse_mesh, t2, l_star, **build_options).coefficients
    phi_distance = float(np.max(np.abs((phi1 - phi2).toarray())))
    samples = _drive_samples(spec, [t1, t2], grid_n or default_grid_n(spec.dim))
    v2_distance = float(np.max(np.abs(samples[0] - samples[1])))
    return ContinuityProbe(phi_distance=phi_distance, v2_distance=v2_distance)
