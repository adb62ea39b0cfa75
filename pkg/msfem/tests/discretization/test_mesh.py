import numpy as np
import pytest

from msfem.src.discretization.mesh import (
    build_mesh,
    fine_dofs_in_patch,
    interpolation_matrix,
    nodal_patch,
    parent_elements,
    refinement_ratio,
    saturation_level,
)
from msfem.src.utils.exceptions import MeshError


def _barycentric(points: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of x in each triangle, points shape (e, 3, 2)"""
    edges = points[:, 1:, :] - points[:, :1, :]
    rhs = x - points[:, 0, :]
    lam12 = np.linalg.solve(np.transpose(edges, (0, 2, 1)), rhs[..., None])[..., 0]
    return np.concatenate([1.0 - lam12.sum(axis=1, keepdims=True), lam12], axis=1)


def test_build_mesh_rejects_bad_input():
    with pytest.raises(MeshError):
        build_mesh(3, 8)
    with pytest.raises(MeshError):
        build_mesh(1, 1)
    with pytest.raises(MeshError):
        build_mesh(2, 2.5)


def test_1d_mesh_layout():
    mesh = build_mesh(1, 4)
    assert mesh.h == 0.25
    assert mesh.n_dofs == 4
    assert mesh.n_elements == 4
    np.testing.assert_array_equal(mesh.elements, [[0, 1], [1, 2], [2, 3], [3, 0]])
    np.testing.assert_allclose(mesh.vertices[:, 0], [0.0, 0.25, 0.5, 0.75])
    # last element is unwrapped geometrically
    np.testing.assert_allclose(mesh.element_points[-1, :, 0], [0.75, 1.0])


def test_2d_mesh_layout():
    mesh = build_mesh(2, 3)
    assert mesh.n_dofs == 9
    assert mesh.n_elements == 18
    assert mesh.element_measure == pytest.approx(1.0 / 18.0)
    # cell 0 split along the diagonal
    np.testing.assert_array_equal(mesh.elements[0], [0, 1, 4])
    np.testing.assert_array_equal(mesh.elements[1], [0, 4, 3])
    # top-right cell wraps in both directions
    np.testing.assert_array_equal(mesh.elements[16], [8, 6, 0])
    assert mesh.incidence.shape == (18, 9)
    np.testing.assert_array_equal(np.asarray(mesh.incidence.sum(axis=0)).ravel(), np.full(9, 6))


def test_nodal_patch_levels_1d():
    mesh = build_mesh(1, 8)
    assert nodal_patch(mesh, 0, 0).element_ids == frozenset({7, 0})
    assert nodal_patch(mesh, 0, 1).element_ids == frozenset({6, 7, 0, 1})
    assert not nodal_patch(mesh, 0, 2).covers(mesh)
    assert nodal_patch(mesh, 0, 3).covers(mesh)
    assert saturation_level(mesh) == 3


def test_nodal_patch_2d_hat_support():
    mesh = build_mesh(2, 4)
    patch = nodal_patch(mesh, 5, 0)
    assert len(patch.element_ids) == 6
    assert patch.element_mask(mesh).sum() == 6
    assert len(nodal_patch(mesh, 5, 1).element_ids) > 6


def test_nodal_patch_rejects_bad_arguments():
    mesh = build_mesh(1, 4)
    with pytest.raises(MeshError):
        nodal_patch(mesh, 4, 0)
    with pytest.raises(MeshError):
        nodal_patch(mesh, 0, -1)


def test_refinement_ratio():
    assert refinement_ratio(build_mesh(1, 4), build_mesh(1, 16)) == 4
    with pytest.raises(MeshError):
        refinement_ratio(build_mesh(1, 3), build_mesh(1, 8))
    with pytest.raises(MeshError):
        refinement_ratio(build_mesh(1, 4), build_mesh(2, 8))


def test_interpolation_matrix_1d_reproduces_linear_functions():
    coarse, fine = build_mesh(1, 4), build_mesh(1, 8)
    p = interpolation_matrix(coarse, fine)
    assert p.shape == (8, 4)
    np.testing.assert_allclose(np.asarray(p.sum(axis=1)).ravel(), np.ones(8))
    values = p @ coarse.vertices[:, 0]
    np.testing.assert_allclose(values[:7], fine.vertices[:7, 0])
    # last interval wraps back to the value at x=0
    assert values[7] == pytest.approx(0.375)


def test_interpolation_matrix_2d_reproduces_linear_functions():
    coarse, fine = build_mesh(2, 4), build_mesh(2, 12)
    p = interpolation_matrix(coarse, fine)
    np.testing.assert_allclose(np.asarray(p.sum(axis=1)).ravel(), np.ones(fine.n_dofs))
    f = lambda xy: xy[:, 0] + 2.0 * xy[:, 1]
    values = p @ f(coarse.vertices)
    home = fine.grid_index // 3
    inner = (home < 3).all(axis=1)
    np.testing.assert_allclose(values[inner], f(fine.vertices)[inner], atol=1e-14)


def test_fine_dofs_in_patch_1d():
    coarse, fine = build_mesh(1, 4), build_mesh(1, 16)
    # hat support of x=0.5 is [0.25, 0.75]
    dofs = fine_dofs_in_patch(fine, coarse, nodal_patch(coarse, 2, 0))
    np.testing.assert_array_equal(dofs, np.arange(5, 12))


def test_fine_dofs_in_patch_2d():
    coarse, fine = build_mesh(2, 4), build_mesh(2, 8)
    dofs = fine_dofs_in_patch(fine, coarse, nodal_patch(coarse, 5, 0))
    assert dofs.size == 7
    assert np.all(np.diff(dofs) > 0)
    offsets = fine.grid_index[dofs] - np.array([2, 2])
    assert np.all(np.abs(offsets) <= 1)
    assert np.all(np.abs(offsets[:, 0] - offsets[:, 1]) <= 1)


def test_fine_dofs_in_saturated_patch_is_everything():
    coarse, fine = build_mesh(1, 4), build_mesh(1, 8)
    patch = nodal_patch(coarse, 0, saturation_level(coarse))
    np.testing.assert_array_equal(fine_dofs_in_patch(fine, coarse, patch), np.arange(8))


def test_parent_elements_1d():
    parent = parent_elements(build_mesh(1, 4), build_mesh(1, 12))
    np.testing.assert_array_equal(parent, np.repeat(np.arange(4), 3))


def test_parent_elements_2d_contains_fine_centroids():
    coarse, fine = build_mesh(2, 3), build_mesh(2, 9)
    parent = parent_elements(coarse, fine)
    centroids = fine.element_points.mean(axis=1)
    # compare in the parent's own cell to avoid the periodic wrap
    cell_shift = (fine.element_cell // 3 - coarse.element_cell[parent]) * coarse.h
    lam = _barycentric(coarse.element_points[parent] + cell_shift[:, None, :], centroids)
    assert np.all(lam > 0.0)
