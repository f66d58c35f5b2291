import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from singhyp.maps import make_belykh, make_geometric_lorenz, make_stacked_lorenz
from singhyp.trajectory import OrbitRecord, Point2

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

STANDARD_GL = dict(A=0.5, B=0.4, nu0=0.8, nu=1.5)


@pytest.fixture
def gl():
    return make_geometric_lorenz(**STANDARD_GL)


@pytest.fixture
def belykh13():
    return make_belykh(k=0.0, lambda1=0.3, lambda2=1.3, mu1=0.3, mu2=1.3)


@pytest.fixture
def stacked3():
    return make_stacked_lorenz(base=STANDARD_GL, levels=3)


def record_from_points(points):
    """An OrbitRecord carrying the given retained points (for measure tests)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return OrbitRecord(initial=Point2(*pts[0]), points=pts, steps_taken=len(pts),
                       termination="completed", min_singular_distance=1.0,
                       branch_itinerary=None, branch_counts=np.zeros(2, np.int64),
                       final=Point2(*pts[-1]), requested=len(pts))


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
