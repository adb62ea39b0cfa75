"""Binary containers (.npz) for basis sets, enriched spaces and reference payloads.

Each container stores named arrays, a JSON header and a SHA-256 checksum of
the arrays, verified on load.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np
import scipy.sparse as sp

from msfem.src.discretization.mesh import build_mesh
from msfem.src.multiscale.enrichment import EnrichedSpace, EnrichmentBlock
from msfem.src.multiscale.msbasis import MultiscaleBasis
from msfem.src.utils.exceptions import CacheCorruptionError

logger = logging.getLogger(__name__)

HEADER_KEY = "__header__"
CHECKSUM_KEY = "__checksum__"


def array_checksum(arrays: Dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(arrays):
        value = np.ascontiguousarray(arrays[name])
        digest.update(name.encode())
        digest.update(str(value.dtype).encode())
        digest.update(str(value.shape).encode())
        digest.update(value.tobytes())
    return digest.hexdigest()


def write_container(path: Path, arrays: Dict[str, np.ndarray], header: Dict[str, Any]) -> str:
    """Write arrays plus header; returns the checksum"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    checksum = array_checksum(arrays)
    payload = dict(arrays)
    payload[HEADER_KEY] = np.array(json.dumps(header, sort_keys=True))
    payload[CHECKSUM_KEY] = np.array(checksum)
    with open(path, "wb") as handle:
        np.savez_compressed(handle, **payload)
    return checksum


def read_container(path: Path, expected_checksum: str | None = None) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    try:
        with np.load(Path(path), allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files if k not in (HEADER_KEY, CHECKSUM_KEY)}
            header = json.loads(str(data[HEADER_KEY]))
            stored = str(data[CHECKSUM_KEY])
    except (OSError, KeyError, ValueError) as e:
        raise CacheCorruptionError(f"unreadable container {path}: {e}") from e
    actual = array_checksum(arrays)
    if actual != stored or (expected_checksum is not None and actual != expected_checksum):
        raise CacheCorruptionError(f"checksum mismatch in {path}")
    return arrays, header


def _sparse_arrays(prefix: str, matrix: sp.spmatrix) -> Dict[str, np.ndarray]:
    csc = sp.csc_matrix(matrix)
    return {
        f"{prefix}data": csc.data,
        f"{prefix}indices": csc.indices,
        f"{prefix}indptr": csc.indptr,
        f"{prefix}shape": np.array(csc.shape),
    }


def _sparse_from(prefix: str, arrays: Dict[str, np.ndarray]) -> sp.csc_matrix:
    shape = tuple(int(v) for v in arrays[f"{prefix}shape"])
    return sp.csc_matrix(
        (arrays[f"{prefix}data"], arrays[f"{prefix}indices"], arrays[f"{prefix}indptr"]),
        shape=shape,
    )


def _basis_header(basis: MultiscaleBasis) -> Dict[str, Any]:
    return {
        "coarse": {"dim": basis.coarse_mesh.dim, "n": basis.coarse_mesh.n_cells_per_side},
        "fine": {"dim": basis.fine_mesh.dim, "n": basis.fine_mesh.n_cells_per_side},
        "epsilon": basis.epsilon,
        "build_time": basis.build_time,
        "l_star": basis.l_star,
        "diagnostics": basis.diagnostics,
        "localized": not basis.is_global,
    }


def _basis_from(prefix: str, arrays: Dict[str, np.ndarray], header: Dict[str, Any]) -> MultiscaleBasis:
    coarse = build_mesh(header["coarse"]["dim"], header["coarse"]["n"])
    fine = build_mesh(header["fine"]["dim"], header["fine"]["n"])
    coefficients = _sparse_from(prefix, arrays)
    if header.get("localized"):
        # supports are the stored nonzero pattern of each column
        supports = tuple(
            coefficients.indices[coefficients.indptr[i] : coefficients.indptr[i + 1]].copy()
            for i in range(coefficients.shape[1])
        )
    else:
        supports = (None,) * coefficients.shape[1]
    return MultiscaleBasis(
        coarse_mesh=coarse,
        fine_mesh=fine,
        coefficients=coefficients,
        build_time=float(header["build_time"]),
        l_star=header["l_star"],
        epsilon=float(header["epsilon"]),
        supports=supports,
        diagnostics=dict(header.get("diagnostics", {})),
    )


def save_basis(path: Path, basis: MultiscaleBasis) -> str:
    return write_container(path, _sparse_arrays("basis_", basis.coefficients), _basis_header(basis))


def load_basis(path: Path) -> MultiscaleBasis:
    arrays, header = read_container(path)
    return _basis_from("basis_", arrays, header)


def save_enriched_space(path: Path, space: EnrichedSpace) -> str:
    arrays = _sparse_arrays("basis_", space.base.coefficients)
    for i, block in enumerate(space.blocks):
        arrays[f"block{i}_functions"] = block.functions
        arrays[f"block{i}_kept"] = block.kept_indices
    header = _basis_header(space.base)
    header["blocks"] = space.block_manifest()
    header["gram_condition"] = space.gram_condition
    return write_container(path, arrays, header)


def load_enriched_space(path: Path) -> EnrichedSpace:
    """Reload an enriched space; block sources are not stored, only kept functions"""
    arrays, header = read_container(path)
    base = _basis_from("basis_", arrays, header)
    blocks = [
        EnrichmentBlock(
            build_time=float(entry["build_time"]),
            source=None,
            kept_indices=arrays[f"block{i}_kept"],
            functions=arrays[f"block{i}_functions"],
        )
        for i, entry in enumerate(header.get("blocks", []))
    ]
    return EnrichedSpace(base=base, blocks=blocks, gram_condition=header.get("gram_condition"))
