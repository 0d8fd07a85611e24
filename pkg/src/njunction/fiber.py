"""Equivariant periodic minimizers on circles and their structural classes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import connect1d
from .connect1d import HeteroclinicProfile
from .descent import bb_descent
from .errors import ParameterError
from .potential import Potential, eval_w, grad_w, w_change
from .symmetry import SparsePreconditioner, omega_scalar, twisted_cycle

TAGS = ("V1", "V2", "V3", "V4", "VSTAR")


@dataclass
class FiberProfile:
    """A map on the circle of radius r, stored on one fundamental arc.

    ``v[k]`` is the value at angle ``theta[k] = k * 2 pi / (folds * n_arc)``;
    the rest of the circle follows from ``v(theta + 2 pi / folds) = omega v(theta)``.
    """

    r: float
    theta: np.ndarray
    v: np.ndarray
    energy: float
    arc_step: float
    potential: Potential

    @property
    def folds(self) -> int:
        return self.potential.h * self.potential.N

    @property
    def n_arc(self) -> int:
        return len(self.theta)

    def full_circle(self):
        om = self.potential.omega
        vals, g = [], np.eye(self.potential.m)
        for _ in range(self.folds):
            vals.append(self.v @ g.T)
            g = om @ g
        n = self.folds * self.n_arc
        theta = 2 * np.pi * np.arange(n) / n
        return theta, np.vstack(vals)


def arc_energy(p: Potential, v: np.ndarray, ds: float) -> float:
    """Energy of one fundamental arc with twisted closure v_n = omega v_0."""
    closed = np.vstack([v, (p.omega @ v[0])[None]])
    du = np.diff(closed, axis=0)
    return float(0.5 * np.sum(du * du) / ds + ds * np.sum(eval_w(p, v)))


def _arc_energy_grad(p, v, ds):
    om = p.omega
    nxt = np.vstack([v[1:], (om @ v[0])[None]])
    prv = np.vstack([(om.T @ v[-1])[None], v[:-1]])
    g = (2 * v - nxt - prv) / ds + ds * grad_w(p, v)
    return arc_energy(p, v, ds), g


def _arc_energy_change(p, v, vn, ds):
    """arc_energy(vn) - arc_energy(v) without subtracting two totals."""
    dv = vn - v
    closed = np.vstack([v, (p.omega @ v[0])[None]])
    dclosed = np.vstack([dv, (p.omega @ dv[0])[None]])
    du, ddu = np.diff(closed, axis=0), np.diff(dclosed, axis=0)
    kin = (float(np.sum(du * ddu)) + 0.5 * float(np.sum(ddu * ddu))) / ds
    return kin + ds * float(np.sum(w_change(p, v, vn)))


def make_fiber(p: Potential, r: float, v: np.ndarray) -> FiberProfile:
    v = np.asarray(v, float).reshape(-1, p.m)
    n = len(v)
    folds = p.h * p.N
    dth = 2 * np.pi / (folds * n)
    ds = r * dth
    return FiberProfile(float(r), dth * np.arange(n), v, folds * arc_energy(p, v, ds), ds, p)


def default_n_arc(p: Potential, r: float, C_W: float) -> int:
    arc = 2 * np.pi * r / (p.h * p.N)
    return max(128, int(np.ceil(arc * C_W / 0.1)))


def minimize_fiber(p: Potential, r: float, n_arc: int | None = None, tol: float = 1e-8,
                   seed="periodic-seed", profile: HeteroclinicProfile | None = None,
                   max_iter: int = 50000) -> FiberProfile:
    """Descent minimizer of the periodic equivariant energy on the circle of radius r."""
    if profile is None:
        profile = default_profile(p)
    c = profile.constants
    folds = p.h * p.N
    if n_arc is None:
        n_arc = default_n_arc(p, r, c.C_W)
    if n_arc < 128:
        raise ParameterError("n_arc must be >= 128")
    rbar = connect1d.r_bar(profile, folds)
    if r < rbar:
        raise ParameterError(f"r = {r} below the existence threshold r_bar = {rbar:.4g}")
    arc = 2 * np.pi * r / folds
    ds = arc / n_arc
    if isinstance(seed, str):
        if seed == "periodic-seed":
            v0 = periodic_seed_samples(profile, r, n_arc)
        elif seed == "uniform-a":
            if not np.allclose(p.omega @ p.a, p.a):
                raise ParameterError("seed 'uniform-a' is not equivariant: omega a != a")
            v0 = np.tile(p.a, (n_arc, 1))
        else:
            raise ParameterError(f"unknown seed {seed!r}")
    else:
        v0 = np.asarray(seed, float).reshape(n_arc, p.m)

    A = twisted_cycle(n_arc, omega_scalar(p))
    P = A / ds + (c.C_W ** 2) * ds * sp.identity(n_arc, dtype=A.dtype)
    pre = SparsePreconditioner(p, P, v0.shape)
    shape = v0.shape

    def eg(x):
        E, g = _arc_energy_grad(p, x.reshape(shape), ds)
        return E, g.ravel()

    def resid(g):
        return float(np.max(np.abs(g))) / ds

    def change(x, xn):
        return _arc_energy_change(p, x.reshape(shape), xn.reshape(shape), ds)

    x, _ = bb_descent(eg, v0.ravel(), pre, resid, tol, max_iter=max_iter, energy_change=change)
    return make_fiber(p, r, x.reshape(shape))


def default_profile(p: Potential, constants=None, n: int = 4000) -> HeteroclinicProfile:
    from .potential import estimate_constants

    if constants is None:
        constants = estimate_constants(p)
    L = max(20.0, 27.0 / constants.c_W)
    return connect1d.solve_heteroclinic(p, L=L, n=n, constants=constants)


def periodic_seed_samples(profile: HeteroclinicProfile, r: float, n_arc: int) -> np.ndarray:
    """Sample the bridge-plus-heteroclinic seed whose period matches r."""
    p = profile.potential
    folds = p.h * p.N
    delta, bridge = connect1d.seed_delta_for_radius(profile, r, folds)
    seed = connect1d.build_periodic_seed(profile, delta, bridge_length=bridge)
    T = seed.segment_length
    s = np.arange(n_arc) * T / n_arc
    return np.column_stack([np.interp(s, seed.t, seed.u[:, k]) for k in range(p.m)])


# ---------------------------------------------------------------- classification


@dataclass
class AnalysisParams:
    delta: float
    alpha: float
    alpha_prime: float
    c: float
    nu: float
    r_delta: float
    sigma: float
    c_W: float
    C_W: float
    delta_W: float
    N: int
    h: int = 1

    def __post_init__(self):
        if not 2 * self.alpha + self.alpha_prime < 1:
            raise ParameterError("need 2*alpha + alpha' < 1")
        if not (0 < self.alpha < 1 and 0 < self.alpha_prime < 1):
            raise ParameterError("alpha, alpha' must lie in (0, 1)")
        if not 0 < self.delta <= self.delta_W * (1 + 1e-12):
            raise ParameterError(f"delta = {self.delta} outside (0, delta_W = {self.delta_W}]")
        if not self.c > 1 or not self.nu > 0:
            raise ParameterError("invalid derived constants c, nu")

    @property
    def delta_prime(self) -> float:
        return self.c * self.delta ** self.alpha

    @property
    def folds(self) -> int:
        return self.h * self.N

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("delta", "alpha", "alpha_prime", "c", "nu", "r_delta",
                                              "sigma", "c_W", "C_W", "delta_W", "N", "h")} | \
            {"delta_prime": self.delta_prime}


def make_params(profile: HeteroclinicProfile, delta: float | None = None, alpha: float = 0.25,
                alpha_prime: float = 0.25, r_delta=None) -> AnalysisParams:
    """Derive the analysis constants from a heteroclinic profile.

    ``r_delta`` may be a number, ``None`` (the energy threshold
    (folds*sigma + delta^(1+alpha)) / (pi c_W^2 delta^2)) or ``"existence"``
    (the smallest radius carrying a periodic seed at this delta).
    """
    p = profile.potential
    k = profile.constants
    if delta is None:
        delta = min(0.05 * p.well_radius, k.delta_W / 4)
    sigma = profile.sigma
    folds = p.h * p.N
    c = 1 + 1 / (k.c_W * p.N) + k.C_W / k.c_W
    nu = 4 * sigma / (k.c_W ** 2 * delta ** 2)
    if r_delta is None:
        r_delta = (folds * sigma + delta ** (1 + alpha)) / (np.pi * k.c_W ** 2 * delta ** 2)
    elif r_delta == "existence":
        tl, th = connect1d.crossing_times(profile, delta)
        z_plus = profile(np.array([tl]))[0]
        z_minus = np.linalg.solve(p.omega, profile(np.array([th]))[0])
        tau = np.linalg.norm(z_plus - z_minus) / (k.C_W * delta)
        r_delta = folds * (th - tl + tau) / (2 * np.pi)
    params = AnalysisParams(float(delta), alpha, alpha_prime, float(c), float(nu), float(r_delta),
                            float(sigma), k.c_W, k.C_W, k.delta_W, p.N, p.h)
    sep = np.linalg.norm(p.omega @ p.a - p.a)
    if params.delta_prime >= 0.5 * sep:
        raise ParameterError(
            f"c*delta^alpha = {params.delta_prime:.3g} must stay below half the well spacing "
            f"{0.5 * sep:.3g}; lower delta or raise alpha")
    return params


@dataclass
class FiberClass:
    tag: str
    theta_r: float | None = None
    s_transition: float | None = None
    a_prime: np.ndarray | None = None
    details: dict = field(default_factory=dict)


def _crossing_up(f, k):
    """Fractional index where f crosses 0 upward between k-1 and k."""
    if k == 0:
        return 0.0
    return (k - 1) + (-f[k - 1]) / (f[k] - f[k - 1])


def classify_fiber(v: FiberProfile, params: AnalysisParams) -> FiberClass:
    """Place a periodic map in V1, V2, V3, V4 or VSTAR (tested in that order)."""
    p = v.potential
    theta, vals = v.full_circle()
    n_tot = len(vals)
    n_arc = v.n_arc
    wells = p.wells
    delta = params.delta
    dprime = params.delta_prime
    dist = np.linalg.norm(vals[:, None, :] - wells[None], axis=-1)
    if not np.any(dist <= delta):
        return FiberClass("V1", details={"min_dist": float(dist.min())})
    # translation: start at the sample deepest inside B_delta(a)
    k0 = int(np.argmin(dist[:, 0]))
    idx = (k0 + np.arange(n_arc + 1)) % n_tot
    w_d = dist[idx]
    adjacent = {0, 1 % p.N}
    nonadj = [j for j in range(p.N) if j not in adjacent]
    if nonadj and np.any(w_d[1:-1][:, nonadj] <= delta):
        return FiberClass("V2")
    fa = w_d[:, 0] - dprime
    fb = w_d[:, 1 % p.N] - dprime
    exits = np.nonzero(fa >= 0)[0]
    outs = np.nonzero(fb >= 0)[0]
    if len(exits) == 0 or len(outs) == 0:
        return FiberClass("V3", details={"reason": "no delta' crossing"})
    k_minus = exits[0]
    s_minus = _crossing_up(fa, k_minus)
    k_plus = outs[-1]
    if k_plus + 1 <= n_arc:
        s_plus = k_plus + fb[k_plus] / (fb[k_plus] - fb[k_plus + 1])
    else:
        s_plus = float(k_plus)
    between = np.arange(int(np.floor(s_minus)) + 1, int(np.ceil(s_plus)))
    if len(between) and np.any((w_d[between, 0] <= delta) | (w_d[between, 1 % p.N] <= delta)):
        return FiberClass("V3")
    width = max(s_plus - s_minus, 0.0) * v.arc_step
    if width >= params.nu:
        return FiberClass("V4", s_transition=width)
    sector = 2 * np.pi / v.folds
    mid = 0.5 * (s_minus + s_plus)
    theta_r = float((theta[k0] + mid * (theta[1] - theta[0])) % sector)
    if sector - theta_r < 1e-12:
        theta_r = 0.0
    return FiberClass("VSTAR", theta_r=theta_r, s_transition=float(width),
                      a_prime=p.omega @ p.a,
                      details={"k0": k0, "s_minus": float(s_minus), "s_plus": float(s_plus)})


def midpoint_decay(v: FiberProfile, cls: FiberClass, constants, delta_W: float | None = None):
    """Distance from ``a`` half a fundamental arc away from the layer, and the
    cosh comparison envelope ``delta_W^2 / cosh(c_W (pi r / folds - s/2))``."""
    if cls.tag != "VSTAR":
        raise ParameterError("midpoint decay only defined for VSTAR fibers")
    p = v.potential
    theta, vals = v.full_circle()
    dth = theta[1] - theta[0]
    layer = cls.theta_r
    target = (layer + np.pi / v.folds) % (2 * np.pi)
    k = int(round(target / dth)) % len(vals)
    # nearest well to that point is a by construction of theta_r
    dist = np.min(np.linalg.norm(vals[k] - p.wells, axis=1))
    dW = constants.delta_W if delta_W is None else delta_W
    s_dw = cls.s_transition
    arg = constants.c_W * (np.pi * v.r / v.folds - s_dw / 2)
    env = dW ** 2 / np.cosh(arg) if arg < 700 else 0.0
    return float(dist), float(env)


@dataclass
class GapTable:
    r: np.ndarray
    energy: np.ndarray
    gap: np.ndarray
    tags: list
    fitted_rate: float
    theory_rate: float
    reference: float

    def rows(self):
        return list(zip(self.r.tolist(), self.energy.tolist(), self.gap.tolist(), self.tags))


def fiber_gap(p: Potential, r_list, profile: HeteroclinicProfile | None = None, tol: float = 1e-10,
              n_arc=None, params: AnalysisParams | None = None, arc_step: float | None = None,
              reference: float | None = None) -> GapTable:
    """Gap folds*sigma - J_r(u_r) along increasing radii, with a log-linear rate fit.

    ``arc_step`` picks n_arc per radius so every fiber shares one spacing;
    ``reference`` replaces folds*sigma (e.g. by folds times the discrete chain
    energy of the heteroclinic at that spacing).
    """
    r_list = np.asarray(r_list, dtype=float)
    if np.any(np.diff(r_list) <= 0):
        raise ParameterError("r_list must be increasing")
    if profile is None:
        profile = default_profile(p)
    folds = p.h * p.N
    energies, tags = [], []
    for r in r_list:
        n = n_arc if arc_step is None else int(round(2 * np.pi * r / (folds * arc_step)))
        f = minimize_fiber(p, r, n_arc=n, tol=tol, profile=profile)
        energies.append(f.energy)
        tags.append(classify_fiber(f, params).tag if params is not None else None)
    energies = np.array(energies)
    ref = folds * profile.sigma if reference is None else reference
    gap = ref - energies
    pos = gap > 0
    if pos.sum() >= 2:
        slope = np.polyfit(r_list[pos], np.log(gap[pos]), 1)[0]
        rate = float(-slope)
    else:
        rate = float("nan")
    return GapTable(r_list, energies, gap, tags, rate,
                    float(profile.constants.c_W * np.pi / folds), float(ref))
