import pytest

from msfem.src.discretization.fem_assembly import FineOperators
from msfem.src.discretization.mesh import build_mesh
from msfem.src.potentials.catalog import catalog


@pytest.fixture
def mathieu():
    """Example 1 potential at the reference semiclassical parameter"""
    return catalog(1, 1.0 / 32.0)


@pytest.fixture
def small_fine_ops():
    """Example 1 at eps=1/8 on a mesh small enough for dense oracles"""
    spec = catalog(1, 1.0 / 8.0, e0=4.0)
    return FineOperators.assemble(build_mesh(1, 64), spec)
