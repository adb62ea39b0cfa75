"""Command line entry point: ``msfem run|validate|basis|reference <experiment file>``"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from sqlmodel import SQLModel, create_engine

from msfem.src.config import Settings, settings as default_settings
from msfem.src.data_access.containers import save_basis, save_enriched_space
from msfem.src.data_access.repository import ReferenceCacheRepository
from msfem.src.discretization.fem_assembly import FineOperators
from msfem.src.discretization.mesh import build_mesh
from msfem.src.dynamics.reference_solver import solve_reference
from msfem.src.experiments.config import load_config, resolve_potential, validate_config
from msfem.src.experiments.runner import run_experiment
from msfem.src.multiscale.enrichment import build_enriched_space
from msfem.src.utils.exceptions import ConfigValidationError, MsfemError
from msfem.src.utils.log_config import configure_logging
from msfem.src.utils.timing import timed_stage

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CELL_FAILURE = 1
EXIT_INVALID = 2


def build_repository(settings: Settings) -> ReferenceCacheRepository:
    settings.cache_dir.mkdir(parents=True, exist_ok=True)
    engine = create_engine(settings.resolved_database_url, echo=False)
    SQLModel.metadata.create_all(engine)
    return ReferenceCacheRepository(engine, settings.cache_dir)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msfem",
        description="MsFEM / En-MsFEM experiments for the semiclassical Schrodinger equation",
    )
    parser.add_argument("--log-level", default=None, help="overrides MSFEM_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run all (method, mesh) cells and write CSV artifacts")
    run.add_argument("config", type=Path)
    run.add_argument("--output-dir", type=Path, default=None)
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--no-cache", action="store_true", help="do not read or write the reference cache")

    validate = sub.add_parser("validate", help="check an experiment file and print the normalized config")
    validate.add_argument("config", type=Path)

    basis = sub.add_parser("basis", help="offline stage only: build and serialize the bases")
    basis.add_argument("config", type=Path)
    basis.add_argument("--output-dir", type=Path, default=None)
    basis.add_argument("--workers", type=int, default=None)

    reference = sub.add_parser("reference", help="compute the reference solution into the cache")
    reference.add_argument("config", type=Path)
    reference.add_argument("--workers", type=int, default=None)
    return parser


def _cmd_validate(args: argparse.Namespace, settings: Settings) -> int:
    report = validate_config(load_config(args.config), settings)
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True, default=str))
    return EXIT_OK


def _cmd_run(args: argparse.Namespace, settings: Settings) -> int:
    repository = None if args.no_cache else build_repository(settings)
    result = run_experiment(
        load_config(args.config),
        repository=repository,
        settings=settings,
        max_workers=args.workers,
        output_dir=args.output_dir,
    )
    for cell in result.failures:
        print(f"FAILED {cell.method} H=1/{cell.coarse_n}: {cell.error_type}: {cell.error}", file=sys.stderr)
    print(f"Artifacts written to {result.output_dir}")
    return EXIT_OK if result.succeeded else EXIT_CELL_FAILURE


def _cmd_basis(args: argparse.Namespace, settings: Settings) -> int:
    report = validate_config(load_config(args.config), settings)
    config = report.config
    spec = resolve_potential(config)
    output_dir = Path(args.output_dir or config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    workers = args.workers or settings.max_workers
    fine_ops = FineOperators.assemble(build_mesh(spec.dim, config.fine_n), spec)
    failures = 0
    for n in sorted(config.coarse_ns):
        coarse = build_mesh(spec.dim, n)
        l_star = config.l_star_for(n)
        try:
            with timed_stage(f"basis H=1/{n}", logger):
                space, snapshot = build_enriched_space(
                    fine_ops,
                    coarse,
                    l_star,
                    config.keep_fraction,
                    mode=config.enrichment_mode if "EnMsFEM" in config.methods else "none",
                    t0=config.t0,
                    delta=config.delta,
                    n_snapshots=config.n_snapshots,
                    drop_tol=config.drop_tol,
                    gram_condition_max=settings.gram_condition_max,
                    max_workers=workers,
                    potential_shift=config.potential_shift,
                    dense_limit=settings.factorization_dense_limit,
                    c_max=config.mesh_condition_max,
                )
        except MsfemError as e:
            logger.error(f"Basis build failed for H=1/{n}: {e}")
            failures += 1
            continue
        save_basis(output_dir / f"basis_msfem_H{n}.npz", space.base)
        if space.blocks:
            save_enriched_space(output_dir / f"basis_enmsfem_H{n}.npz", space)
        print(f"H=1/{n}: {space.base.n_functions} functions, enrichment {space.kept_counts} at {snapshot.selected}")
    return EXIT_OK if failures == 0 else EXIT_CELL_FAILURE


def _cmd_reference(args: argparse.Namespace, settings: Settings) -> int:
    config = validate_config(load_config(args.config), settings).config
    spec = resolve_potential(config)
    solution = solve_reference(
        spec,
        config.reference_fine_n,
        config.reference_dt,
        config.t_final,
        config.record_times(),
        t0=config.t0,
        repository=build_repository(settings),
        self_convergence=config.reference_self_convergence,
        method=config.reference_method,
        coarse_n=config.reference_coarse_n,
        keep_fraction=config.keep_fraction,
        max_workers=args.workers or settings.max_workers,
    )
    state = "cached" if solution.from_cache else "computed"
    print(f"Reference {solution.key} {state}; self-convergence margin: {solution.self_convergence}")
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run,
    "validate": _cmd_validate,
    "basis": _cmd_basis,
    "reference": _cmd_reference,
}


def main(argv: Optional[List[str]] = None, settings: Optional[Settings] = None) -> int:
    settings = settings or default_settings
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or settings.log_level)
    try:
        return COMMANDS[args.command](args, settings)
    except ConfigValidationError as e:
        for message in e.errors:
            print(f"config error: {message}", file=sys.stderr)
        return EXIT_INVALID
    except MsfemError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CELL_FAILURE


if __name__ == "__main__":
    sys.exit(main())
