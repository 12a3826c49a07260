import numpy as np
import pytest

from fieldconv import shapes
from fieldconv.intrinsic import compute_cache
from fieldconv.mesh import normalize_unit_area


@pytest.fixture(scope="session")
def ellipsoid():
    sdf = shapes.superquadric_sdf((1.3, 1.0, 0.8), 2.0)
    return normalize_unit_area(shapes.project_sphere(shapes.fibonacci_sphere(120), sdf))[0]


@pytest.fixture(scope="session")
def ellipsoid_cache(ellipsoid):
    return compute_cache(ellipsoid, 0.3)


@pytest.fixture(scope="session")
def small_cache():
    """A 40-vertex sphere with wide balls, cheap enough for direct sums."""
    mesh = normalize_unit_area(shapes.fibonacci_sphere(40))[0]
    return mesh, compute_cache(mesh, 0.4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def cfield(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


# acceptance results, echoed after the run so they show even when output is captured
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def pair_cache(w=0.5, r=0.1, theta_qp=0.0, phi_pq=0.0, epsilon=0.2):
    """Two vertices that are each other's only neighbor, with hand-set records
    (the same values for both directions)."""
    from fieldconv.intrinsic import IntrinsicCache, wrap_angle
    theta_pq = float(wrap_angle(theta_qp + phi_pq + np.pi))
    two = lambda v: np.array([v, v], dtype=np.float64)  # noqa: E731
    return IntrinsicCache(epsilon, b"\0" * 32, np.eye(3)[[0, 0]], np.eye(3)[[1, 1]], np.array([0, 1, 2]),
                          np.array([1, 0]), two(w), two(r), two(theta_qp), two(theta_pq), two(phi_pq))
