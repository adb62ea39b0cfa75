"""Uniform periodic meshes of the unit interval and unit square, nodal patches
and exact transfer operators between nested meshes."""

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Tuple

import numpy as np
import scipy.sparse as sp

from msfem.src.utils.exceptions import MeshError

logger = logging.getLogger(__name__)

# Local vertex positions of each element kind in units of h.
# 2D cells split along the lower-left to upper-right diagonal:
# kind 0 = (ll, lr, ur), kind 1 = (ll, ur, ul).
_LOCAL_VERTICES_1D = np.array([[[0.0], [1.0]]])
_LOCAL_VERTICES_2D = np.array(
    [
        [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
        [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
    ]
)


@dataclass(frozen=True)
class Mesh:
    """Uniform periodic mesh with ``n_cells_per_side**dim`` dofs.

    Dof ``i + n*j`` sits at ``(i*h, j*h)``. In 2D, cell ``c = i + n*j`` owns
    elements ``2c`` (lower triangle) and ``2c + 1`` (upper triangle).
    """

    dim: int
    n_cells_per_side: int

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells_per_side

    @property
    def n_dofs(self) -> int:
        return self.n_cells_per_side**self.dim

    @property
    def n_elements(self) -> int:
        return self.n_cells_per_side if self.dim == 1 else 2 * self.n_cells_per_side**2

    @property
    def element_measure(self) -> float:
        return self.h if self.dim == 1 else 0.5 * self.h**2

    @property
    def local_vertices(self) -> np.ndarray:
        """Reference vertex positions per element kind, shape (kinds, dim+1, dim), in units of h"""
        return _LOCAL_VERTICES_1D if self.dim == 1 else _LOCAL_VERTICES_2D

    @cached_property
    def grid_index(self) -> np.ndarray:
        """Integer grid coordinates of each dof, shape (n_dofs, dim)"""
        n = self.n_cells_per_side
        k = np.arange(self.n_dofs)
        if self.dim == 1:
            return k[:, None]
        return np.stack([k % n, k // n], axis=1)

    @cached_property
    def vertices(self) -> np.ndarray:
        return self.grid_index * self.h

    @cached_property
    def element_kind(self) -> np.ndarray:
        if self.dim == 1:
            return np.zeros(self.n_elements, dtype=np.int64)
        return np.arange(self.n_elements) % 2

    @cached_property
    def element_cell(self) -> np.ndarray:
        """Integer grid coordinates of the cell owning each element, shape (n_elements, dim)"""
        n = self.n_cells_per_side
        if self.dim == 1:
            return np.arange(n)[:, None]
        c = np.arange(self.n_elements) // 2
        return np.stack([c % n, c // n], axis=1)

    @cached_property
    def elements(self) -> np.ndarray:
        """Vertex dof indices of each element, shape (n_elements, dim+1)"""
        n = self.n_cells_per_side
        if self.dim == 1:
            k = np.arange(n)
            return np.stack([k, (k + 1) % n], axis=1)
        i, j = self.element_cell[:, 0], self.element_cell[:, 1]
        ll = i + n * j
        lr = (i + 1) % n + n * j
        ur = (i + 1) % n + n * ((j + 1) % n)
        ul = i + n * ((j + 1) % n)
        lower = np.stack([ll, lr, ur], axis=1)
        upper = np.stack([ll, ur, ul], axis=1)
        return np.where((self.element_kind == 0)[:, None], lower, upper)

    @cached_property
    def element_points(self) -> np.ndarray:
        """Unwrapped physical vertex coordinates per element, shape (n_elements, dim+1, dim).

        Coordinates may reach 1.0 on the right/top layer; they are the
        geometric positions used for quadrature, not the periodic dof positions.
        """
        local = self.local_vertices[self.element_kind]
        return (self.element_cell[:, None, :] + local) * self.h

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Element-by-dof incidence matrix"""
        rows = np.repeat(np.arange(self.n_elements), self.dim + 1)
        data = np.ones(rows.size)
        return sp.csr_matrix(
            (data, (rows, self.elements.ravel())), shape=(self.n_elements, self.n_dofs)
        )


@dataclass(frozen=True)
class Patch:
    """Nodal patch D_l around a coarse vertex"""

    center_vertex: int
    level: int
    element_ids: frozenset

    def element_mask(self, mesh: Mesh) -> np.ndarray:
        mask = np.zeros(mesh.n_elements, dtype=bool)
        mask[list(self.element_ids)] = True
        return mask

    def covers(self, mesh: Mesh) -> bool:
        return len(self.element_ids) == mesh.n_elements


def build_mesh(dim: int, n_cells_per_side: int) -> Mesh:
    if dim not in (1, 2):
        raise MeshError(f"dim must be 1 or 2, got {dim}")
    if int(n_cells_per_side) != n_cells_per_side or n_cells_per_side < 2:
        raise MeshError(f"n_cells_per_side must be an integer >= 2, got {n_cells_per_side}")
    return Mesh(dim=dim, n_cells_per_side=int(n_cells_per_side))


def nodal_patch(mesh: Mesh, vertex: int, level: int) -> Patch:
    """Elements within ``level`` rings of ``vertex``.

    Level 0 is the support of the hat function at ``vertex``; each further
    level adds every element sharing a dof with the previous patch.
    """
    if not 0 <= vertex < mesh.n_dofs:
        raise MeshError(f"vertex {vertex} outside [0, {mesh.n_dofs})")
    if level < 0:
        raise MeshError(f"patch level must be >= 0, got {level}")
    incidence = mesh.incidence
    dof_mask = np.zeros(mesh.n_dofs)
    dof_mask[vertex] = 1.0
    element_mask = incidence @ dof_mask > 0
    for _ in range(level):
        if element_mask.all():
            break
        dof_mask = incidence.T @ element_mask.astype(float) > 0
        element_mask = incidence @ dof_mask.astype(float) > 0
    return Patch(
        center_vertex=vertex,
        level=level,
        element_ids=frozenset(np.flatnonzero(element_mask).tolist()),
    )


def saturation_level(mesh: Mesh, vertex: int = 0) -> int:
    """Smallest level whose patch covers the whole domain"""
    level = 0
    while not nodal_patch(mesh, vertex, level).covers(mesh):
        level += 1
    return level


def refinement_ratio(coarse: Mesh, fine: Mesh) -> int:
    if coarse.dim != fine.dim:
        raise MeshError(f"mesh dimensions differ: {coarse.dim} vs {fine.dim}")
    ratio, rest = divmod(fine.n_cells_per_side, coarse.n_cells_per_side)
    if rest != 0 or ratio < 1:
        raise MeshError(
            f"fine mesh n={fine.n_cells_per_side} is not nested in coarse mesh "
            f"n={coarse.n_cells_per_side}"
        )
    return ratio


def _coarse_element_id(coarse: Mesh, cx: np.ndarray, cy: np.ndarray, kind: np.ndarray) -> np.ndarray:
    n = coarse.n_cells_per_side
    if coarse.dim == 1:
        return cx % n
    return 2 * ((cx % n) + n * (cy % n)) + kind


@lru_cache(maxsize=64)
def _nested_transfer(coarse: Mesh, fine: Mesh) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """Containment and interpolation matrices between nested meshes.

    Everything is computed in integer fine-grid units, so membership of fine
    dofs on coarse edges and vertices is decided exactly.
    """
    r = refinement_ratio(coarse, fine)
    grid = fine.grid_index
    home = grid // r
    local = grid % r
    fine_ids = np.arange(fine.n_dofs)

    # closure containment: fine dof x coarse element
    rows, cols = [], []
    if fine.dim == 1:
        for dx in (0, -1):
            valid = (local[:, 0] == 0) if dx else np.ones(fine.n_dofs, dtype=bool)
            rows.append(fine_ids[valid])
            cols.append(_coarse_element_id(coarse, home[valid, 0] + dx, None, None))
    else:
        for dx in (0, -1):
            for dy in (0, -1):
                valid = np.ones(fine.n_dofs, dtype=bool)
                if dx:
                    valid &= local[:, 0] == 0
                if dy:
                    valid &= local[:, 1] == 0
                u = np.where(dx, r, local[:, 0])[valid]
                v = np.where(dy, r, local[:, 1])[valid]
                cx, cy = home[valid, 0] + dx, home[valid, 1] + dy
                ids = fine_ids[valid]
                lower = v <= u
                upper = u <= v
                rows.extend([ids[lower], ids[upper]])
                cols.extend(
                    [
                        _coarse_element_id(coarse, cx[lower], cy[lower], 0),
                        _coarse_element_id(coarse, cx[upper], cy[upper], 1),
                    ]
                )
    rows_arr = np.concatenate(rows)
    cols_arr = np.concatenate(cols)
    containment = sp.csr_matrix(
        (np.ones(rows_arr.size), (rows_arr, cols_arr)),
        shape=(fine.n_dofs, coarse.n_elements),
    )
    # boolean membership
    containment.data[:] = 1.0

    # interpolation of coarse hats at fine dofs via barycentric coordinates
    n_c = coarse.n_cells_per_side
    if fine.dim == 1:
        u = local[:, 0] / r
        left = home[:, 0] % n_c
        right = (home[:, 0] + 1) % n_c
        i_rows = np.concatenate([fine_ids, fine_ids])
        i_cols = np.concatenate([left, right])
        i_vals = np.concatenate([1.0 - u, u])
    else:
        u = local[:, 0] / r
        v = local[:, 1] / r
        cx, cy = home[:, 0], home[:, 1]
        ll = cx % n_c + n_c * (cy % n_c)
        lr = (cx + 1) % n_c + n_c * (cy % n_c)
        ur = (cx + 1) % n_c + n_c * ((cy + 1) % n_c)
        ul = cx % n_c + n_c * ((cy + 1) % n_c)
        is_lower = local[:, 1] <= local[:, 0]
        # lower (ll, lr, ur): (1-u, u-v, v); upper (ll, ur, ul): (1-v, u, v-u)
        w_ll = np.where(is_lower, 1.0 - u, 1.0 - v)
        w_mid = np.where(is_lower, u - v, u)
        w_top = np.where(is_lower, v, v - u)
        mid = np.where(is_lower, lr, ur)
        top = np.where(is_lower, ur, ul)
        i_rows = np.concatenate([fine_ids, fine_ids, fine_ids])
        i_cols = np.concatenate([ll, mid, top])
        i_vals = np.concatenate([w_ll, w_mid, w_top])
    keep = i_vals != 0.0
    interpolation = sp.csr_matrix(
        (i_vals[keep], (i_rows[keep], i_cols[keep])),
        shape=(fine.n_dofs, coarse.n_dofs),
    )
    return containment, interpolation


def interpolation_matrix(coarse: Mesh, fine: Mesh) -> sp.csr_matrix:
    """Exact P1 prolongation from ``coarse`` to a nested ``fine`` mesh, shape (fine, coarse)"""
    return _nested_transfer(coarse, fine)[1]


def fine_dofs_in_patch(fine: Mesh, coarse: Mesh, patch: Patch) -> np.ndarray:
    """Sorted fine dofs lying strictly inside the patch region.

    A fine dof is interior iff every coarse element whose closure contains it
    belongs to the patch; dofs on the patch boundary are excluded.
    """
    containment, _ = _nested_transfer(coarse, fine)
    outside = ~patch.element_mask(coarse)
    touches_outside = containment @ outside.astype(float) > 0
    return np.flatnonzero(~touches_outside)


@lru_cache(maxsize=64)
def parent_elements(coarse: Mesh, fine: Mesh) -> np.ndarray:
    """Coarse element containing each fine element (exact on nested meshes)"""
    r = refinement_ratio(coarse, fine)
    cells = fine.element_cell
    home = cells // r
    if fine.dim == 1:
        return _coarse_element_id(coarse, home[:, 0], None, None)
    # centroid in thirds of a fine cell: lower (2/3, 1/3), upper (1/3, 2/3)
    kind = fine.element_kind
    cu = 3 * (cells[:, 0] % r) + np.where(kind == 0, 2, 1)
    cv = 3 * (cells[:, 1] % r) + np.where(kind == 0, 1, 2)
    coarse_kind = np.where(cv < cu, 0, 1)
    return _coarse_element_id(coarse, home[:, 0], home[:, 1], coarse_kind)
