import numpy as np
import pytest

from wavefocus.design import DesignTarget, RegularizationPolicy, cap_target, design, synthetic_target
from wavefocus.grid import FOUR_PI, WaveContext, build_domain_grid, build_sphere_grid

CAP_K = 2 * np.pi
PARTICLE_A = 0.01


@pytest.fixture(scope="session")
def sphere512():
    return build_sphere_grid(16, 32)


@pytest.fixture(scope="session")
def cap_design(sphere512):
    """Polar-cap target, 16^3 box of side 2 at one wavelength per unit."""
    grid = build_domain_grid(([-1.0] * 3, [1.0] * 3), (16, 16, 16))
    ctx = WaveContext(CAP_K)
    f = cap_target(sphere512)
    target = DesignTarget(f, 0.1 * f.norm(), ctx)
    return design(target, grid, sphere512, RegularizationPolicy(), c0=FOUR_PI * PARTICLE_A)


@pytest.fixture(scope="session")
def reachable_design(sphere512):
    grid = build_domain_grid(([-0.5] * 3, [0.5] * 3), (12, 12, 12))
    ctx = WaveContext(CAP_K)
    f, h_star = synthetic_target(grid, sphere512, ctx.k, seed=1)
    target = DesignTarget(f, 1e-3 * f.norm(), ctx)
    return design(target, grid, sphere512, RegularizationPolicy(), c0=FOUR_PI * PARTICLE_A)


_acceptance_lines = []


def record_acceptance(line):
    _acceptance_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
