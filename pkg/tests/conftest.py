import dataclasses

import numpy as np
import pytest

from focalfuse.mesh import icosphere
from focalfuse.sdf import box_sdf


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def unit_sphere():
    return icosphere(4)


def shifted_sphere(center, radius, subdivisions=3):
    m = icosphere(subdivisions, radius)
    return dataclasses.replace(m, positions=m.positions + np.asarray(center, dtype=np.float64))


@pytest.fixture(scope="session")
def tiny_scene():
    """A small sphere with a tangent region to its right and a box target."""
    from focalfuse.focal import make_focal_region

    base = shifted_sphere((-0.3, 0.0, 0.0), 0.5)
    region = make_focal_region((0.3, 0.25, 0.25), translation=(0.5, 0.0, 0.0), subdivisions=3)

    def target(p):
        return box_sdf((0.5, 0.0, 0.0), (0.18, 0.13, 0.13), p)

    return base, region, target


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
