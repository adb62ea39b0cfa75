import math

import numpy as np
import pytest

from msfem.src.potentials.catalog import (
    PotentialSpec,
    catalog,
    default_grid_n,
    gaussian_packet,
    load_custom_potential,
    mesh_condition_ratio,
    potential_bound,
    sampling_grid,
    v2_sup_norm,
)
from msfem.src.utils.exceptions import UnknownPotentialError


def shifted_mathieu(epsilon, e0):
    """Factory used by the custom-potential loader test"""
    spec = catalog(1, epsilon, e0)
    return PotentialSpec(
        epsilon=epsilon,
        dim=1,
        v1=lambda x: spec.v1(x) + 1.0,
        terms=spec.terms,
        e0=e0,
        name="shifted_mathieu",
    )


def not_a_potential(epsilon, e0):
    return {"epsilon": epsilon}


def test_mathieu_values():
    spec = catalog(1, 1.0 / 32.0)
    assert spec.dim == 1
    assert spec.period == 1.0
    assert float(spec.evaluate(0.0, 0.0)) == pytest.approx(1.0)
    assert float(spec.v2(0.25, 0.3)) == pytest.approx(6.0)
    assert float(spec.at_time(0.25)(0.5)) == pytest.approx(1.0 + 10.0)
    assert float(spec.at_time(0.25)(1.0 / 64.0)) == pytest.approx(-1.0 + 20.0 / 64.0)


def test_two_scale_drive_range():
    spec = catalog(2, 1.0 / 32.0)
    x = np.array(1.0)
    assert float(spec.v2(0.0, x)) == pytest.approx(0.0, abs=1e-14)
    assert float(spec.v2(0.25, x)) == pytest.approx(20.0)
    expected = 20.0 * (math.exp(-2.0) - 1.0) / (math.exp(2.0) - 1.0)
    assert float(spec.v2(0.75, x)) == pytest.approx(expected)


def test_layered_potential_and_triangle_drive():
    spec = catalog(3, 1.0 / 32.0)
    assert spec.parameters["epsilon2"] == pytest.approx(1.0 / 24.0)
    assert spec.period == 0.5
    assert float(spec.v1(np.array(0.0))) == pytest.approx(0.5)
    assert float(spec.v1(np.array(0.75))) == pytest.approx(2.0 * 0.0625 - 0.5 + 1.0)
    x = np.array(1.0)
    assert float(spec.v2(0.125, x)) == pytest.approx(10.0)
    assert float(spec.v2(0.25, x)) == pytest.approx(20.0)
    assert float(spec.v2(0.375, x)) == pytest.approx(10.0)
    assert float(spec.v2(0.5, x)) == pytest.approx(0.0, abs=1e-12)
    assert float(spec.v2(0.625, x)) == pytest.approx(float(spec.v2(0.125, x)))


def test_checkerboard_branches():
    eps = 1.0 / 8.0
    spec = catalog(4, eps)
    assert spec.dim == 2
    assert spec.parameters["epsilon2"] == pytest.approx(1.0 / 6.0)
    # lower-left quadrant uses the second microscale
    first = math.sin(2.0 * math.pi * 0.0625 * 6.0) + 1.0
    assert float(spec.v1(0.0625, 0.0)) == pytest.approx(first)
    symmetric = catalog(4, eps, symmetric_checkerboard=True)
    assert float(symmetric.v1(0.0625, 0.0)) == pytest.approx(2.0 * first)
    # off-diagonal quadrant: sin(2 pi 25/4) (cos(4 pi) + 1)
    assert float(spec.v1(0.78125, 0.25)) == pytest.approx(2.0)
    assert float(spec.v2(0.25, 0.25, 0.5)) == pytest.approx(15.0)



def test_drive_periodicity():
    x = np.linspace(0.0, 1.0, 17)
    for example_id in (1, 2):
        spec = catalog(example_id, 1.0 / 32.0)
        for t in (0.1, 0.3, 0.85):
            np.testing.assert_allclose(spec.v2(t + 1.0, x), spec.v2(t, x), atol=1e-12)
    spec = catalog(3, 1.0 / 32.0)
    for t in (0.1, 0.3, 0.45):
        np.testing.assert_allclose(spec.v2(t + 0.5, x), spec.v2(t, x), atol=1e-12)


def test_catalog_errors():
    with pytest.raises(ValueError):
        catalog(1, 0.0)
    with pytest.raises(UnknownPotentialError) as excinfo:
        catalog(7, 0.1)
    assert "Unknown example id 7" in str(excinfo.value)


def test_load_custom_potential():
    spec = load_custom_potential(f"{__name__}:shifted_mathieu", 0.25, 5.0)
    assert spec.name == "shifted_mathieu"
    assert spec.source == f"{__name__}:shifted_mathieu"
    assert catalog(1, 0.25, 5.0).source is None
    assert float(spec.evaluate(0.0, np.array(0.0))) == pytest.approx(2.0)
    with pytest.raises(UnknownPotentialError):
        load_custom_potential("no_colon", 0.25, 5.0)
    with pytest.raises(UnknownPotentialError):
        load_custom_potential(f"{__name__}:missing", 0.25, 5.0)
    with pytest.raises(UnknownPotentialError):
        load_custom_potential(f"{__name__}:not_a_potential", 0.25, 5.0)


def test_sampling_grid():
    (x,) = sampling_grid(1, 5)
    np.testing.assert_allclose(x, [0.0, 0.25, 0.5, 0.75, 1.0])
    x, y = sampling_grid(2, 3)
    assert x.shape == (3, 3)
    assert y[0, 2] == 1.0
    with pytest.raises(ValueError):
        sampling_grid(1, 1)
    assert default_grid_n(1) == 4096
    assert default_grid_n(2) == 512


def test_v2_sup_norms():
    spec = catalog(1, 1.0 / 32.0)
    assert v2_sup_norm(spec, 0.25) == pytest.approx(20.0)
    assert v2_sup_norm(spec, 0.5) == pytest.approx(0.0, abs=1e-12)
    assert v2_sup_norm(spec, 0.75, grid_n=9) == pytest.approx(20.0)


def test_potential_bound_and_mesh_ratio():
    spec = catalog(1, 1.0 / 32.0)
    v0 = potential_bound(spec)
    assert v0 == pytest.approx(21.0, abs=1e-9)
    ratio = mesh_condition_ratio(v0, 1.0 / 64.0, 1.0 / 32.0)
    assert ratio == pytest.approx(math.sqrt(21.0) / 2.0, rel=1e-9)
    assert ratio > 2.0


def test_gaussian_packet_is_normalized():
    (x,) = sampling_grid(1, 4001)
    values = gaussian_packet(1)(x)
    # about 2.5 standard deviations of |psi|^2 fit inside the unit interval
    assert np.trapezoid(values**2, x) == pytest.approx(0.9876, abs=1e-3)
    x, y = sampling_grid(2, 401)
    values = gaussian_packet(2)(x, y)
    assert values.max() == pytest.approx(1.0 / (2.0 * np.pi * 0.04) ** 0.5, rel=1e-6)
