"""Experiment orchestration: offline basis builds, online evolution, error tables.

Every (method, coarse mesh) pair is an independent cell. A failing cell is
recorded in the run manifest and the remaining cells proceed.
"""

import json
import logging
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from msfem.src.config import Settings, settings as default_settings
from msfem.src.data_access.repository import ReferenceCacheRepository
from msfem.src.discretization.fem_assembly import FineOperators
from msfem.src.discretization.mesh import Mesh, build_mesh
from msfem.src.dynamics.evolution import Observer, WaveState
from msfem.src.dynamics.observables import (
    density_errors,
    element_centroids,
    energy_density,
    mass_and_energy_trace,
    position_density,
    relative_errors,
    total_energy,
    total_mass,
)
from msfem.src.dynamics.reference_solver import (
    ReferenceSolution,
    prolong,
    run_and_record,
    solve_reference,
    solve_standard_fem_coarse,
)
from msfem.src.experiments.config import (
    METHOD_ORDER,
    ExperimentConfig,
    ValidationReport,
    resolve_potential,
    validate_config,
)
from msfem.src.multiscale.enrichment import EnrichedSpace, build_enriched_space
from msfem.src.multiscale.msbasis import MultiscaleBasis, build_space
from msfem.src.potentials.catalog import PotentialSpec
from msfem.src.utils.timing import timed_stage

logger = logging.getLogger(__name__)

ERROR_COLUMNS = [
    "method",
    "example",
    "epsilon",
    "H",
    "l_star",
    "dt",
    "t",
    "rel_L2",
    "rel_H1",
    "mass",
    "energy",
    "rel_density_L2",
    "rel_energy_density_L2",
    "basis_dim",
]
TRACE_COLUMNS = ["method", "example", "epsilon", "H", "t", "mass", "energy"]
PROFILE_COLUMNS = ["method", "H", "kind", "x", "y", "value"]
REFERENCE_LABEL = "reference"
FLOAT_FORMAT = "%.17g"


@dataclass
class CellResult:
    method: str
    coarse_n: int
    status: str = "ok"
    error: Optional[str] = None
    error_type: Optional[str] = None
    offline_seconds: Optional[float] = None
    online_seconds: Optional[float] = None
    basis_dim: Optional[int] = None
    details: Dict[str, Any] = field(default_factory=dict)
    errors: List[dict] = field(default_factory=list)
    trace: List[dict] = field(default_factory=list)
    profiles: Optional[pd.DataFrame] = None

    @property
    def H(self) -> float:
        return 1.0 / self.coarse_n

    def manifest_entry(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "H": self.H,
            "coarse_n": self.coarse_n,
            "status": self.status,
            "error": self.error,
            "error_type": self.error_type,
            "offline_seconds": self.offline_seconds,
            "online_seconds": self.online_seconds,
            "basis_dim": self.basis_dim,
            **self.details,
        }


@dataclass
class RunResult:
    output_dir: Path
    manifest: Dict[str, Any]
    artifacts: Dict[str, Path]
    cells: List[CellResult]

    @property
    def failures(self) -> List[CellResult]:
        return [cell for cell in self.cells if cell.status != "ok"]

    @property
    def succeeded(self) -> bool:
        return not self.failures


class _SharedBases:
    """Builds the t0 multiscale basis once per coarse mesh for all cells that need it"""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._futures: Dict[int, Future] = {}

    def get(self, coarse_n: int, build: Callable[[], MultiscaleBasis]) -> MultiscaleBasis:
        with self._lock:
            future = self._futures.get(coarse_n)
            owner = future is None
            if owner:
                future = Future()
                self._futures[coarse_n] = future
        if owner:
            try:
                future.set_result(build())
            except BaseException as e:
                future.set_exception(e)
        return future.result()


@dataclass
class _RunContext:
    config: ExperimentConfig
    spec: PotentialSpec
    fine_ops: FineOperators
    reference: ReferenceSolution
    reference_ops: FineOperators
    record_times: np.ndarray
    basis_workers: int
    settings: Settings
    bases: _SharedBases = field(default_factory=_SharedBases)


def _trace_observer(stride: int, sink: List[Tuple[float, np.ndarray]]) -> Observer:
    def collect(step: int, state: WaveState, fine_psi: np.ndarray) -> None:
        sink.append((state.t, fine_psi.copy()))

    return Observer(collect, stride=stride)


def _build_options(ctx: _RunContext) -> Dict[str, Any]:
    return {
        "potential_shift": ctx.config.potential_shift,
        "dense_limit": ctx.settings.factorization_dense_limit,
        "c_max": ctx.config.mesh_condition_max,
    }


def _offline(ctx: _RunContext, cell: CellResult, coarse: Mesh) -> Optional[EnrichedSpace]:
    """Basis for the cell's method; None for plain FEM"""
    if cell.method == "FEM":
        return None
    config = ctx.config
    l_star = config.l_star_for(cell.coarse_n)
    base = ctx.bases.get(
        cell.coarse_n,
        lambda: build_space(
            ctx.fine_ops,
            coarse,
            config.t0,
            l_star,
            max_workers=ctx.basis_workers,
            **_build_options(ctx),
        ),
    )
    mode = config.enrichment_mode if cell.method == "EnMsFEM" else "none"
    space, snapshot = build_enriched_space(
        ctx.fine_ops,
        coarse,
        l_star,
        config.keep_fraction,
        mode=mode,
        t0=config.t0,
        delta=config.delta,
        n_snapshots=config.n_snapshots,
        drop_tol=config.drop_tol,
        gram_condition_max=ctx.settings.gram_condition_max,
        max_workers=ctx.basis_workers,
        base=base,
        **_build_options(ctx),
    )
    cell.details.update(
        {
            "l_star": l_star,
            "mesh_condition_ratio": base.diagnostics.get("mesh_condition_ratio"),
            "selected_times": [float(t) for t in snapshot.selected],
            "kept_counts": space.kept_counts,
            "gram_condition": space.gram_condition,
        }
    )
    return space


def _error_rows(
    ctx: _RunContext, cell: CellResult, mesh: Mesh, ops: FineOperators, states: np.ndarray
) -> List[dict]:
    config = ctx.config
    ref_mesh = ctx.reference.mesh
    l_star = cell.details.get("l_star")
    rows = []
    for t, psi in zip(ctx.record_times, states):
        t = float(t)
        psi_ref = ctx.reference.state_at(t)
        psi_num = prolong(psi, mesh, ref_mesh)
        report = relative_errors(
            psi_num, psi_ref, ctx.reference_ops.stiffness, ctx.reference_ops.mass
        )
        rel_density, rel_energy = density_errors(
            psi_num, psi_ref, ctx.spec, t, ref_mesh, ctx.reference_ops.mass
        )
        rows.append(
            {
                "method": cell.method,
                "example": config.example_label,
                "epsilon": config.epsilon,
                "H": cell.H,
                "l_star": "" if l_star is None else str(l_star),
                "dt": config.dt,
                "t": t,
                "rel_L2": report.rel_L2,
                "rel_H1": report.rel_H1,
                "mass": total_mass(psi, ops.mass),
                "energy": total_energy(psi, ops, t),
                "rel_density_L2": rel_density,
                "rel_energy_density_L2": rel_energy,
                "basis_dim": cell.basis_dim,
            }
        )
    return rows


def profile_frame(
    method: str, H: float, psi: np.ndarray, spec: PotentialSpec, t: float, mesh: Mesh
) -> pd.DataFrame:
    """Long-format position density at vertices and energy density at element centroids"""
    vertices = mesh.vertices
    centroids = element_centroids(mesh)
    if mesh.dim == 1:
        vx, vy = vertices[:, 0], np.zeros(mesh.n_dofs)
        cx, cy = centroids[:, 0], np.zeros(mesh.n_elements)
    else:
        vx, vy = vertices[:, 0], vertices[:, 1]
        cx, cy = centroids[:, 0], centroids[:, 1]
    position = pd.DataFrame(
        {"method": method, "H": H, "kind": "position", "x": vx, "y": vy, "value": position_density(psi)}
    )
    energy = pd.DataFrame(
        {
            "method": method,
            "H": H,
            "kind": "energy",
            "x": cx,
            "y": cy,
            "value": energy_density(psi, spec, t, mesh),
        }
    )
    return pd.concat([position, energy], ignore_index=True)[PROFILE_COLUMNS]


def _run_cell(ctx: _RunContext, cell: CellResult) -> CellResult:
    config = ctx.config
    label = f"{cell.method} H=1/{cell.coarse_n}"
    coarse = build_mesh(ctx.spec.dim, cell.coarse_n)
    samples: List[Tuple[float, np.ndarray]] = []
    try:
        with timed_stage(f"{label} offline", logger) as offline:
            space = _offline(ctx, cell, coarse)
        cell.offline_seconds = offline.seconds

        with timed_stage(f"{label} online", logger) as online:
            observer = _trace_observer(config.observer_stride, samples)
            if space is None:
                solution = solve_standard_fem_coarse(
                    ctx.spec,
                    cell.coarse_n,
                    config.dt,
                    config.t_final,
                    ctx.record_times,
                    config.t0,
                    [observer],
                    dense_threshold=ctx.settings.dense_threshold,
                )
                mesh, ops, states = solution.mesh, solution.operators, solution.states
                cell.basis_dim = mesh.n_dofs
            else:
                mesh, ops = ctx.fine_ops.mesh, ctx.fine_ops
                cell.basis_dim = space.dimension
                states = run_and_record(
                    ops,
                    space.coefficients,
                    config.dt,
                    config.t0,
                    config.t_final,
                    ctx.record_times,
                    [observer],
                    dense_threshold=ctx.settings.dense_threshold,
                )
        cell.online_seconds = online.seconds

        cell.errors = _error_rows(ctx, cell, mesh, ops, states)
        trace = mass_and_energy_trace(samples, ops)
        cell.trace = [
            {
                "method": cell.method,
                "example": config.example_label,
                "epsilon": config.epsilon,
                "H": cell.H,
                **row,
            }
            for row in trace.to_dict(orient="records")
        ]
        if len(trace):
            mass = trace["mass"].to_numpy()
            cell.details["max_relative_mass_drift"] = float(np.max(np.abs(mass - mass[0])) / mass[0])
        cell.profiles = profile_frame(
            cell.method,
            cell.H,
            prolong(states[-1], mesh, ctx.reference.mesh),
            ctx.spec,
            config.t_final,
            ctx.reference.mesh,
        )
    except Exception as e:
        logger.exception(f"Cell {label} failed: {e}")
        cell.status = "failed"
        cell.error = str(e)
        cell.error_type = type(e).__name__
    return cell


def _sort_rows(frame: pd.DataFrame, keys: List[str]) -> pd.DataFrame:
    if frame.empty:
        return frame
    order = frame["method"].map(lambda m: METHOD_ORDER.get(m, len(METHOD_ORDER)))
    frame = frame.assign(_order=order).sort_values(["_order", *keys], kind="mergesort")
    return frame.drop(columns="_order").reset_index(drop=True)


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_artifacts(
    output_dir: Path, cells: List[CellResult], reference_profile: Optional[pd.DataFrame], config: ExperimentConfig
) -> Dict[str, Path]:
    """Serialize all tables; row order depends only on method, H and t"""
    output_dir.mkdir(parents=True, exist_ok=True)
    ok = [cell for cell in cells if cell.status == "ok"]
    errors = pd.DataFrame([row for cell in ok for row in cell.errors], columns=ERROR_COLUMNS)
    errors = _sort_rows(errors, ["H", "t"])
    final = errors[np.isclose(errors["t"].astype(float), config.t_final, atol=1e-9)] if len(errors) else errors
    trace = _sort_rows(
        pd.DataFrame([row for cell in ok for row in cell.trace], columns=TRACE_COLUMNS), ["H", "t"]
    )
    frames = [cell.profiles for cell in ok if cell.profiles is not None]
    if reference_profile is not None:
        frames.append(reference_profile)
    profiles = (
        pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=PROFILE_COLUMNS)
    )
    profiles = _sort_rows(profiles, ["H", "kind"])
    return {
        "error_vs_H": _write_csv(final.reset_index(drop=True), output_dir / "error_vs_H.csv"),
        "error_vs_time": _write_csv(errors, output_dir / "error_vs_time.csv"),
        "mass_energy": _write_csv(trace, output_dir / "mass_energy.csv"),
        "density_profiles": _write_csv(profiles, output_dir / "density_profiles.csv"),
    }


def run_experiment(
    config: ExperimentConfig,
    repository: Optional[ReferenceCacheRepository] = None,
    settings: Optional[Settings] = None,
    max_workers: Optional[int] = None,
    output_dir: Optional[Path] = None,
) -> RunResult:
    """Run every (method, coarse mesh) cell of an experiment and write its CSV artifacts.

    Args:
        config: experiment description; validated and normalized first
        repository: reference cache; references are recomputed when None
        settings: process settings, defaults to the MSFEM_* environment
        max_workers: concurrent cells, defaults to ``settings.max_workers``
        output_dir: overrides ``config.output_dir``

    Returns:
        RunResult with the manifest, artifact paths and per-cell outcomes
    """
    settings = settings or default_settings
    started = time.perf_counter()
    report: ValidationReport = validate_config(config, settings)
    config = report.config
    output_dir = Path(output_dir or config.output_dir)
    workers = max(1, max_workers or settings.max_workers)
    spec = resolve_potential(config)

    with timed_stage("reference", logger) as reference_stage:
        reference = solve_reference(
            spec,
            config.reference_fine_n,
            config.reference_dt,
            config.t_final,
            config.record_times(),
            t0=config.t0,
            repository=repository,
            self_convergence=config.reference_self_convergence,
            method=config.reference_method,
            coarse_n=config.reference_coarse_n,
            keep_fraction=config.keep_fraction,
            max_workers=workers,
        )

    with timed_stage("fine operators", logger):
        fine_ops = FineOperators.assemble(build_mesh(spec.dim, config.fine_n), spec)
        reference_ops = (
            fine_ops
            if config.reference_fine_n == config.fine_n
            else FineOperators.assemble(reference.mesh, spec)
        )
        # warm cached properties before worker threads read them
        fine_ops.v0

    cells = [
        CellResult(method=method, coarse_n=n)
        for method in config.methods
        for n in sorted(config.coarse_ns)
    ]
    ctx = _RunContext(
        config=config,
        spec=spec,
        fine_ops=fine_ops,
        reference=reference,
        reference_ops=reference_ops,
        record_times=reference.times,
        basis_workers=workers if workers == 1 or len(cells) == 1 else 1,
        settings=settings,
    )
    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(cells))) as pool:
            cells = list(pool.map(lambda cell: _run_cell(ctx, cell), cells))
    else:
        cells = [_run_cell(ctx, cell) for cell in cells]

    reference_profile = profile_frame(
        REFERENCE_LABEL, reference.mesh.h, reference.final, spec, config.t_final, reference.mesh
    )
    artifacts = write_artifacts(output_dir, cells, reference_profile, config)

    manifest = {
        "validation": report.as_dict(),
        "potential": {
            "name": spec.name,
            "example_id": spec.example_id,
            "dim": spec.dim,
            "epsilon": spec.epsilon,
            "e0": spec.e0,
            "period": spec.period,
            "parameters": spec.parameters,
        },
        "reference": {
            "key": reference.key,
            "method": config.reference_method,
            "fine_n": config.reference_fine_n,
            "dt": config.reference_dt,
            "coarse_n": config.reference_coarse_n,
            "record_times": reference.times.tolist(),
            "self_convergence": reference.self_convergence,
            "from_cache": reference.from_cache,
            "seconds": reference_stage.seconds,
        },
        "cells": [cell.manifest_entry() for cell in cells],
        "failures": [
            {"method": c.method, "H": c.H, "error_type": c.error_type, "error": c.error}
            for c in cells
            if c.status != "ok"
        ],
        "artifacts": {name: path.name for name, path in artifacts.items()},
        "wall_seconds": time.perf_counter() - started,
    }
    manifest_path = output_dir / "run_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    artifacts["manifest"] = manifest_path

    result = RunResult(output_dir=output_dir, manifest=manifest, artifacts=artifacts, cells=cells)
    if result.failures:
        logger.warning(f"{len(result.failures)} of {len(cells)} cell(s) failed; see {manifest_path}")
    else:
        logger.info(f"Experiment finished: {len(cells)} cell(s) written to {output_dir}")
    return result
