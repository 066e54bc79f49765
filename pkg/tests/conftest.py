import functools

import numpy as np
import pytest

from p1maxwell.mesh import SimplicialMesh, build_disk_mesh, build_square_mesh
from p1maxwell.verify import ManufacturedCase, convergence_study


@pytest.fixture(scope="session")
def disk1():
    return build_disk_mesh(1)


@pytest.fixture(scope="session")
def disk2():
    return build_disk_mesh(2)


@pytest.fixture(scope="session")
def disk3():
    return build_disk_mesh(3)


@pytest.fixture(scope="session")
def square2():
    return build_square_mesh(2)


@pytest.fixture(scope="session")
def case2():
    return ManufacturedCase(m=2)


def reference_triangle():
    return SimplicialMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


def unit_tetrahedron():
    return SimplicialMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])


def jittered_square(level, seed, amount=0.25):
    """Square mesh with interior vertices moved randomly (cells stay positive)."""
    base = build_square_mesh(level)
    rng = np.random.default_rng(seed)
    v = np.array(base.vertices)
    inner = np.all(np.abs(v) < 1 - 1e-12, axis=1)
    v[inner] += rng.uniform(-amount, amount, size=(inner.sum(), 2)) * 2.0 ** -level
    return SimplicialMesh(v, base.cells)


@functools.lru_cache(maxsize=None)
def cached_study(m, l_max=5):
    """Convergence study on levels 1..l_max, shared across test modules."""
    return convergence_study(m, 1, l_max)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
