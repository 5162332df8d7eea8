import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from electroelastic.coupled import ball_mesh, two_ball_mesh

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def coarse_ball():
    """Unit ball in [-4, 4]^3 at h = 0.5."""
    return ball_mesh(1.0, 4.0, 0.5)


@pytest.fixture(scope="session")
def ball():
    """Unit ball in [-4, 4]^3 at h = 0.25."""
    return ball_mesh(1.0, 4.0, 0.25)


@pytest.fixture(scope="session")
def two_balls():
    return two_ball_mesh(1.0, 1.0, 3.0, 4.0, 0.5, None)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def single_tet_mesh(scale=1.0):
    """Reference tetrahedron tagged as a flexible molecule with four GAMMA_F faces."""
    from electroelastic.mesh import FaceTag, Mesh, Region

    v = scale * np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    faces = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return Mesh(v, np.array([[0, 1, 2, 3]]), np.array([int(Region.MF)]), faces,
                np.full(4, int(FaceTag.GAMMA_F)), 1.0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
