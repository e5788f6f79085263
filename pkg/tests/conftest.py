import math

import numpy as np
import pytest

from metastable import grid_pde as gp
from metastable.kramers import log_laplace_z
from metastable.potential import build_landscape, find_critical_points, make_potential
from metastable.spectral import analyze_saddle, decompose_drift

NONREV = np.array([[1.0, 1.0], [-1.0, 1.0]])
DEFAULT_BOX = ((-2.0, 2.0), (-1.5, 1.5))


@pytest.fixture(scope="session")
def quartic():
    return make_potential("quartic2d")


@pytest.fixture(scope="session")
def landscape(quartic):
    return build_landscape(quartic, find_critical_points(quartic, quartic.seeds))


def saddle_for(landscape, M):
    p = landscape.potential
    return analyze_saddle(p.hess(landscape.gates[0].location), decompose_drift(M), landscape.gates[0].location)


class Solved:
    """Grid operators, mask and both equilibrium potentials for one instance."""

    def __init__(self, landscape, M, eps, grid, radius=0.3, swap=True):
        self.landscape = landscape
        self.eps = eps
        self.grid = grid
        self.drift = decompose_drift(M)
        self.ops = gp.discretize_generator(grid, landscape.potential, self.drift, eps)
        self.mask = gp.ball_mask(grid, landscape.m1.location, radius, landscape.m2.location, radius)
        self.Z = math.exp(log_laplace_z(landscape, eps))
        self.report, self.h, self.h_star = gp.capacity(self.ops, self.mask, self.Z, with_swap=swap)
        self.cap = self.report.cap


@pytest.fixture(scope="session")
def solved_rev(landscape):
    return Solved(landscape, np.eye(2), 0.1, gp.Grid2D(DEFAULT_BOX, 401, 301))


@pytest.fixture(scope="session")
def solved_nonrev(landscape):
    return Solved(landscape, NONREV, 0.1, gp.Grid2D(DEFAULT_BOX, 401, 301))


@pytest.fixture(scope="session")
def solved_small(landscape):
    """Coarser reversible and non-reversible solves for quick property tests."""
    g = gp.Grid2D(DEFAULT_BOX, 101, 76)
    return {
        "rev": Solved(landscape, np.eye(2), 0.1, g),
        "nonrev": Solved(landscape, NONREV, 0.1, g),
    }
