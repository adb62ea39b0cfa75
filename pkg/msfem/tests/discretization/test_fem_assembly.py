import math

import numpy as np
import pytest
from scipy import integrate

from msfem.src.discretization.fem_assembly import (
    FineOperators,
    assemble_mass,
    assemble_potential,
    assemble_stiffness,
    element_gradients,
    project_function,
    quadrature_rule,
)
from msfem.src.discretization.mesh import build_mesh
from msfem.src.potentials.catalog import catalog, gaussian_packet
from msfem.src.utils.exceptions import NonFiniteValueError


def test_quadrature_weights_sum_to_one():
    for dim in (1, 2):
        lam, weights = quadrature_rule(dim)
        assert weights.sum() == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(lam.sum(axis=1), 1.0)


def test_quadrature_1d_exact_for_degree_nine():
    lam, weights = quadrature_rule(1)
    assert np.dot(weights, lam[:, 1] ** 9) == pytest.approx(0.1, rel=1e-13)


def test_quadrature_2d_exact_for_degree_five():
    lam, weights = quadrature_rule(2)
    x, y = lam[:, 1], lam[:, 2]
    # integral of x^a y^b over the unit reference triangle is a! b! / (a + b + 2)!
    for a, b in [(2, 3), (5, 0), (1, 4), (0, 0)]:
        exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
        assert 0.5 * np.dot(weights, x**a * y**b) == pytest.approx(exact, rel=1e-12)


def test_stiffness_1d_entries():
    s = assemble_stiffness(build_mesh(1, 4)).toarray()
    assert np.allclose(np.diag(s), 8.0)
    assert s[0, 1] == pytest.approx(-4.0)
    assert s[0, 3] == pytest.approx(-4.0)
    assert s[0, 2] == 0.0


def test_stiffness_2d_symmetric_with_zero_row_sums():
    s = assemble_stiffness(build_mesh(2, 2)).toarray()
    np.testing.assert_allclose(s, s.T, atol=1e-14)
    np.testing.assert_allclose(s.sum(axis=1), 0.0, atol=1e-13)
    s4 = assemble_stiffness(build_mesh(2, 4))
    np.testing.assert_allclose(s4 @ np.ones(16), 0.0, atol=1e-13)
    # 5-point stencil on the right-angled split
    assert s4[5, 5] == pytest.approx(4.0)


def test_stiffness_element_mask_restricts_support():
    mesh = build_mesh(1, 8)
    full = assemble_stiffness(mesh)
    everything = assemble_stiffness(mesh, np.ones(mesh.n_elements, dtype=bool))
    np.testing.assert_allclose(everything.toarray(), full.toarray())
    left = assemble_stiffness(mesh, np.arange(8) < 4)
    assert left[6, 6] == 0.0
    assert left[2, 2] == pytest.approx(full[2, 2])


def test_mass_1d_entries_and_total():
    m = assemble_mass(build_mesh(1, 4)).toarray()
    assert np.allclose(np.diag(m), 2.0 * 0.25 / 3.0)
    assert m[0, 3] == pytest.approx(0.25 / 6.0)
    assert m.sum() == pytest.approx(1.0, abs=1e-15)


def test_mass_2d_total():
    assert assemble_mass(build_mesh(2, 2)).sum() == pytest.approx(1.0, abs=1e-14)
    assert assemble_mass(build_mesh(2, 5)).sum() == pytest.approx(1.0, abs=1e-14)


def test_potential_constant_matches_mass():
    for dim in (1, 2):
        mesh = build_mesh(dim, 4)
        mass = assemble_mass(mesh).toarray()
        ones = assemble_potential(mesh, lambda *c: 1.0).toarray()
        np.testing.assert_allclose(ones, mass, atol=1e-15)
        neg = assemble_potential(mesh, lambda *c: -3.0).toarray()
        np.testing.assert_allclose(neg, -3.0 * mass, atol=1e-15)


def test_potential_uses_unwrapped_coordinates():
    mesh = build_mesh(1, 8)
    v = assemble_potential(mesh, lambda x: x)
    # integral of x over [0, 1]
    assert v.sum() == pytest.approx(0.5, abs=1e-14)


def test_potential_oscillatory_matches_adaptive_quadrature():
    eps = 1.0 / 32.0
    mesh = build_mesh(1, 3 * 2**7)
    v = assemble_potential(mesh, lambda x: np.cos(2.0 * np.pi * x / eps)).toarray()

    h = mesh.h
    oracle = np.zeros_like(v)
    shapes = (lambda s: 1.0 - s, lambda s: s)
    for e, (a, b) in enumerate(mesh.elements):
        for i, j in ((0, 0), (0, 1), (1, 1)):
            entry, _ = integrate.quad(
                lambda s: np.cos(2.0 * np.pi * (e + s) * h / eps) * shapes[i](s) * shapes[j](s),
                0.0,
                1.0,
                epsabs=1e-15,
                epsrel=1e-14,
            )
            nodes = (a, b)
            oracle[nodes[i], nodes[j]] += entry * h
            if i != j:
                oracle[nodes[j], nodes[i]] += entry * h
    scale = np.abs(oracle).max()
    assert np.abs(v - oracle).max() / scale < 1e-11


def test_potential_rejects_non_finite_values():
    with pytest.raises(NonFiniteValueError):
        assemble_potential(build_mesh(1, 4), lambda x: np.where(x > 0.5, np.nan, 1.0))


def test_project_function_nodal_values():
    mesh = build_mesh(1, 8)
    np.testing.assert_array_equal(project_function(mesh, lambda x: 1.0), np.ones(8))
    psi = project_function(mesh, gaussian_packet(1))
    x = mesh.vertices[:, 0]
    expected = (1.0 / (2.0 * np.pi * 0.04)) ** 0.25 * np.exp(-((x - 0.5) ** 2) / 0.16)
    np.testing.assert_allclose(psi.real, expected)
    assert psi.dtype == complex
    with pytest.raises(NonFiniteValueError):
        project_function(mesh, lambda x: 1.0 / (x - 0.5))


def test_element_gradients_of_linear_function():
    mesh = build_mesh(2, 4)
    coeffs = 2.0 * mesh.vertices[:, 0] - mesh.vertices[:, 1]
    grads = element_gradients(mesh, coeffs)
    interior = (mesh.element_cell < 3).all(axis=1)
    np.testing.assert_allclose(grads[interior], np.tile([2.0, -1.0], (interior.sum(), 1)))


def test_fine_operators_affine_hamiltonian():
    spec = catalog(1, 1.0 / 8.0)
    ops = FineOperators.assemble(build_mesh(1, 32), spec)
    assert len(ops.v2_blocks) == 1
    base = 0.5 * ops.epsilon**2 * ops.stiffness + ops.v1
    np.testing.assert_allclose(ops.hamiltonian(0.0).toarray(), base.toarray(), atol=1e-12)
    np.testing.assert_allclose(
        (ops.hamiltonian(0.25) - ops.hamiltonian(0.0)).toarray(),
        ops.v2_blocks[0].toarray(),
        atol=1e-12,
    )
    # V0 samples v1 + v2 over one period: cos term plus 20 x
    assert 20.0 < ops.v0 <= 21.0 + 1e-12


def test_fine_operators_dimension_mismatch():
    with pytest.raises(ValueError):
        FineOperators.assemble(build_mesh(2, 4), catalog(1, 0.25))
