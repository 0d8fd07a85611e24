import math
from functools import lru_cache

import numpy as np
import pytest

from njunction import connect1d
from njunction.analysis import analyze
from njunction.disk2d import PolarGrid, build_test_function, minimize_disk
from njunction.fiber import default_profile, make_params
from njunction.potential import Potential, estimate_constants

# configuration of the three-well sweep used across the disk and analysis tests
TRI_RADIUS = 0.43
SWEEP_R = (20, 40, 80)
SWEEP_GRID = (256, 192)


@lru_cache(maxsize=None)
def scalar():
    return Potential("scalar-bistable", N=2, m=1)


@lru_cache(maxsize=None)
def scalar_profile():
    p = scalar()
    return connect1d.solve_heteroclinic(p, L=20, n=4000, constants=estimate_constants(p))


@lru_cache(maxsize=None)
def tri():
    return Potential("polynomial-complex-well", N=3, m=2, well_radius=TRI_RADIUS)


@lru_cache(maxsize=None)
def tri_profile():
    return default_profile(tri())


@lru_cache(maxsize=None)
def tri_params():
    prof = tri_profile()
    return make_params(prof, delta=prof.constants.delta_W, alpha=0.45, alpha_prime=0.05,
                       r_delta="existence")


@lru_cache(maxsize=None)
def sweep_run(R):
    """Test map, minimizer and structure report on the standard grid."""
    p, prof = tri(), tri_profile()
    g = PolarGrid(float(R), *SWEEP_GRID, p.N)
    test = build_test_function(p, prof, g)
    field, rep = minimize_disk(p, g, test, tol=1e-6)
    res = analyze(field, tri_params(), connect1d.tail_rate(prof), total=rep.energy,
                  constants=prof.constants)
    return {"test": test, "field": field, "report": rep, "analysis": res}


@lru_cache(maxsize=None)
def saddle_run(R=40):
    p = Potential("scalar-bistable", N=2, m=1, h=2)
    prof = default_profile(p)
    g = PolarGrid(float(R), 256, 64, 2, h=2)
    field, rep = minimize_disk(p, g, build_test_function(p, prof, g), tol=1e-6)
    return field, rep


@pytest.fixture(scope="session")
def scalar_p():
    return scalar()


@pytest.fixture(scope="session")
def scalar_prof():
    return scalar_profile()


@pytest.fixture(scope="session")
def tri_p():
    return tri()


@pytest.fixture(scope="session")
def tri_prof():
    return tri_profile()


@pytest.fixture(scope="session")
def tri_par():
    return tri_params()


@pytest.fixture(scope="session")
def sweep():
    return {R: sweep_run(R) for R in SWEEP_R}


SQRT2_THIRDS = 2 * math.sqrt(2) / 3


def bogomolny_sigma(N, rho):
    """Action of the holomorphic-square well: sqrt(2) |F(omega a) - F(a)| with F' = z^N - rho^N."""
    om = np.exp(2j * np.pi / N)

    def F(z):
        return z ** (N + 1) / (N + 1) - rho ** N * z

    return math.sqrt(2) * abs(F(om * rho) - F(rho))
