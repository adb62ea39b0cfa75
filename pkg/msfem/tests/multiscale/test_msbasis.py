from functools import partial

import numpy as np
import pytest

from msfem.src.discretization.fem_assembly import FineOperators
from msfem.src.discretization.mesh import build_mesh, nodal_patch, saturation_level
from msfem.src.multiscale.msbasis import (
    build_kkt,
    build_space,
    decay_profile,
    default_l_star,
    localization_errors,
    solve_basis,
)
from msfem.src.potentials.catalog import PotentialSpec, catalog
from msfem.src.utils.exceptions import (
    BasisConstructionError,
    IndefiniteOperatorError,
    RankDeficientConstraintError,
)


def _fourier_potential(*coords, coefficients):
    s = sum(coords)
    total = np.ones(np.shape(s))
    for k, (a, b) in enumerate(coefficients, start=1):
        total = total + a * np.cos(2.0 * np.pi * k * s) + b * np.sin(2.0 * np.pi * k * s)
    return total


def _static_ops(dim, n, epsilon, v1):
    spec = PotentialSpec(epsilon=epsilon, dim=dim, v1=v1, terms=(), e0=0.0, name="static")
    return FineOperators.assemble(build_mesh(dim, n), spec)


def _zero(*coords):
    return np.zeros(np.shape(coords[0]))


def _dense_saddle_point(kkt):
    """Solve [[Q, A^T], [A, 0]] [c; lam] = [0; b] directly"""
    q = kkt.q.toarray()
    a = kkt.a.toarray()
    n, m = q.shape[0], a.shape[0]
    system = np.block([[q, a.T], [a, np.zeros((m, m))]])
    rhs = np.vstack([np.zeros((n, kkt.b.shape[1])), kkt.b])
    return np.linalg.solve(system, rhs)[:n]


def test_default_l_star():
    assert default_l_star(2) == 1
    assert default_l_star(3) == 2
    assert default_l_star(64) == 6
    assert default_l_star(256) == 8


def test_zero_potential_kkt_data():
    ops = _static_ops(1, 16, 1.0 / 32.0, _zero)
    kkt = build_kkt(ops, build_mesh(1, 4), 0.0)
    np.testing.assert_allclose(kkt.q.toarray(), 0.5 * (1.0 / 32.0) ** 2 * ops.stiffness.toarray())
    assert kkt.a.shape == (4, 16)
    np.testing.assert_allclose(kkt.a @ np.ones(16), np.full(4, 0.25), atol=1e-15)
    np.testing.assert_array_equal(kkt.b, np.eye(4))


def test_zero_potential_matches_dense_oracle():
    ops = _static_ops(1, 8, 1.0, _zero)
    kkt = build_kkt(ops, build_mesh(1, 2), 0.0)
    coeffs = solve_basis(kkt)
    np.testing.assert_allclose(coeffs, _dense_saddle_point(kkt), atol=1e-10)


def test_solve_basis_matches_dense_oracle_on_random_instances():
    rng = np.random.default_rng(20240611)
    cases = [
        (1, 2, 8, None),
        (1, 2, 16, None),
        (1, 4, 16, None),
        (1, 4, 32, 0),
        (1, 4, 32, 1),
        (1, 8, 64, 1),
        (1, 8, 64, 2),
        (1, 8, 128, 0),
        (1, 16, 128, 1),
        (1, 4, 64, None),
        (1, 8, 32, None),
        (1, 16, 64, 0),
        (2, 2, 4, None),
        (2, 2, 8, None),
        (2, 4, 16, 0),
        (2, 4, 12, 1),
        (2, 4, 12, 0),
        (2, 3, 9, None),
        (2, 6, 18, 0),
        (2, 6, 18, 1),
        (2, 4, 8, None),
        (2, 8, 32, 0),
    ]
    for dim, coarse_n, fine_n, level in cases:
        coefficients = rng.uniform(-0.15, 0.15, size=(3, 2))
        epsilon = float(rng.uniform(0.05, 1.0))
        ops = _static_ops(
            dim, fine_n, epsilon, partial(_fourier_potential, coefficients=coefficients)
        )
        coarse = build_mesh(dim, coarse_n)
        vertex = int(rng.integers(coarse.n_dofs))
        patch = None if level is None else nodal_patch(coarse, vertex, level)
        kkt = build_kkt(ops, coarse, 0.0, patch)
        assert kkt.n_active <= 200
        coeffs = solve_basis(kkt)
        oracle = _dense_saddle_point(kkt)
        np.testing.assert_allclose(coeffs[kkt.active], oracle, atol=1e-10)
        # feasibility: A c = b
        np.testing.assert_allclose(kkt.a @ coeffs[kkt.active], kkt.b, atol=1e-10)


def test_solve_basis_is_deterministic(small_fine_ops):
    coarse = build_mesh(1, 8)
    first = solve_basis(build_kkt(small_fine_ops, coarse, 0.3))
    second = solve_basis(build_kkt(small_fine_ops, coarse, 0.3))
    np.testing.assert_allclose(first, second, atol=1e-12)


def test_solve_basis_sparse_path_matches_dense_path(small_fine_ops):
    coarse = build_mesh(1, 8)
    dense = solve_basis(build_kkt(small_fine_ops, coarse, 0.1), dense_limit=1500)
    sparse = solve_basis(build_kkt(small_fine_ops, coarse, 0.1), dense_limit=0)
    np.testing.assert_allclose(sparse, dense, atol=1e-10)


def test_indefinite_energy_is_reported():
    ops = _static_ops(1, 16, 1.0 / 8.0, lambda x: np.full(np.shape(x), -1000.0))
    kkt = build_kkt(ops, build_mesh(1, 2), 0.0)
    with pytest.raises(IndefiniteOperatorError):
        solve_basis(kkt)
    with pytest.raises(BasisConstructionError) as excinfo:
        build_space(ops, build_mesh(1, 2), 0.0)
    assert excinfo.value.time == 0.0


def test_too_small_patch_is_rank_deficient():
    ops = _static_ops(1, 4, 0.5, lambda x: np.ones(np.shape(x)))
    coarse = build_mesh(1, 4)
    kkt = build_kkt(ops, coarse, 0.0, nodal_patch(coarse, 1, 0))
    assert kkt.n_active == 1
    with pytest.raises(RankDeficientConstraintError):
        solve_basis(kkt)
    with pytest.raises(BasisConstructionError) as excinfo:
        build_space(ops, coarse, 0.0, l_star=0)
    assert excinfo.value.vertex == 0


def test_global_basis_equals_saturated_patches(small_fine_ops):
    coarse = build_mesh(1, 8)
    level = saturation_level(coarse)
    space = build_space(small_fine_ops, coarse, 0.2, "global")
    assert space.is_global
    assert space.n_functions == 8
    for vertex in (0, 3, 7):
        kkt = build_kkt(small_fine_ops, coarse, 0.2, nodal_patch(coarse, vertex, level))
        np.testing.assert_allclose(
            solve_basis(kkt)[:, 0], space.function(vertex), atol=1e-10
        )
    assert build_space(small_fine_ops, coarse, 0.2, level).is_global


def test_localized_basis_properties(small_fine_ops):
    coarse = build_mesh(1, 8)
    serial = build_space(small_fine_ops, coarse, 0.0, 1)
    parallel = build_space(small_fine_ops, coarse, 0.0, 1, max_workers=3)
    assert not serial.is_global
    assert serial.l_star == 1
    assert serial.build_time == 0.0
    np.testing.assert_allclose(
        serial.coefficients.toarray(), parallel.coefficients.toarray(), atol=1e-14
    )
    assert serial.constraint_residual(small_fine_ops.mass) < 1e-10
    # support of vertex 0 at level 1 spans coarse elements 6, 7, 0, 1
    phi = serial.function(0)
    x = small_fine_ops.mesh.vertices[:, 0]
    assert np.all(phi[(x > 0.25) & (x < 0.75)] == 0.0)
    assert serial.diagnostics["mesh_condition_ratio"] > 0.0


def test_localization_error_decreases_with_level(small_fine_ops):
    errors = localization_errors(small_fine_ops, build_mesh(1, 8), 0.0, [0, 1, 2, 3])
    assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 1e-10


def test_decay_profile_bounds(small_fine_ops):
    coarse = build_mesh(1, 8)
    basis = build_space(small_fine_ops, coarse, 0.0, "global")
    profile = decay_profile(basis, small_fine_ops.stiffness, saturation_level(coarse))
    assert profile.ratios.shape == (8, 4)
    assert np.all(profile.ratios[:, 0] <= 1.0)
    np.testing.assert_allclose(profile.ratios[:, -1], 0.0, atol=1e-14)


def test_mesh_condition_ratio_warning(small_fine_ops, caplog):
    with caplog.at_level("WARNING"):
        build_space(small_fine_ops, build_mesh(1, 8), 0.0, c_max=0.5)
    assert "exceeds 0.5" in caplog.text


def test_example1_localized_basis_is_biorthogonal(mathieu):
    fine_ops = FineOperators.assemble(build_mesh(1, 1024), mathieu)
    coarse = build_mesh(1, 64)
    basis = build_space(fine_ops, coarse, 0.0, default_l_star(64), max_workers=4)
    assert basis.n_functions == 64
    assert basis.constraint_residual(fine_ops.mass) <= 1e-8


def test_example1_global_basis_decays_exponentially(mathieu):
    fine_ops = FineOperators.assemble(build_mesh(1, 1024), mathieu)
    basis = build_space(fine_ops, build_mesh(1, 64), 0.0, "global")
    profile = decay_profile(basis, fine_ops.stiffness, 4)
    assert np.all(np.diff(profile.mean_ratios) < 0.0)
    assert np.all(np.diff(profile.ratios, axis=1) < 0.0)
    assert profile.beta < 0.9
