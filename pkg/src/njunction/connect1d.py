"""One-dimensional heteroclinic connections between adjacent wells."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solveh_banded

from .descent import bb_descent
from .errors import ParameterError
from .potential import Potential, PotentialConstants, estimate_constants, eval_w, grad_w, w_change


@dataclass
class HeteroclinicProfile:
    potential: Potential
    constants: PotentialConstants
    L: float
    s: np.ndarray
    u: np.ndarray  # (n + 1, m)
    sigma: float
    equipartition: float
    el_residual: float
    tail_rate: float
    iterations: int = 0

    @property
    def h(self) -> float:
        return float(self.s[1] - self.s[0])

    def __call__(self, t):
        """Evaluate the profile by linear interpolation, with exponential
        tails beyond the grid ends."""
        return evaluate_profile(self, t)


def chain_energy(p: Potential, u: np.ndarray, h: float) -> float:
    """Trapezoid-rule energy of a sampled path (endpoint weights 1/2)."""
    du = np.diff(u, axis=0)
    w = eval_w(p, u)
    return float(0.5 * np.sum(du * du) / h + h * (np.sum(w) - 0.5 * (w[0] + w[-1])))


def _interior_energy_grad(p, u_full, h):
    E = chain_energy(p, u_full, h)
    lap = (2 * u_full[1:-1] - u_full[:-2] - u_full[2:]) / h
    g = lap + h * grad_w(p, u_full[1:-1])
    return E, g


def _banded_precond(n_int, h, shift):
    ab = np.empty((2, n_int))
    ab[0, :] = -1.0 / h
    ab[1, :] = 2.0 / h + shift * h

    def apply(g):
        return solveh_banded(ab, g, lower=False) if g.ndim == 1 else \
            np.column_stack([solveh_banded(ab, g[:, k]) for k in range(g.shape[1])])

    return apply


def el_residual(p: Potential, u: np.ndarray, h: float) -> float:
    """max |u'' - W_u(u)| over interior nodes."""
    upp = (u[2:] - 2 * u[1:-1] + u[:-2]) / h ** 2
    return float(np.max(np.abs(upp - grad_w(p, u[1:-1])))) if len(u) > 2 else 0.0


def solve_heteroclinic(p: Potential, L: float = 20.0, n: int = 4000, tol: float = 1e-9,
                       constants: PotentialConstants | None = None, max_iter: int = 50000,
                       init: np.ndarray | None = None) -> HeteroclinicProfile:
    """Minimize the pinned-end chain energy from ``a`` to ``omega a`` on [-L, L]."""
    if n < 200:
        raise ParameterError("n must be >= 200")
    if constants is None:
        constants = estimate_constants(p)
    if np.exp(-constants.c_W * L) >= max(tol, 1e-12) and np.exp(-constants.c_W * L) > 1e-3:
        raise ParameterError(f"L = {L} too short for the well decay rate c_W = {constants.c_W:.3g}")
    a, b = p.a, p.omega @ p.a
    s = np.linspace(-L, L, n + 1)
    h = 2 * L / n
    if init is None:
        lam = (s - s[0]) / (2 * L)
        u = (1 - lam)[:, None] * a + lam[:, None] * b
    else:
        u = np.array(init, dtype=float).reshape(n + 1, p.m)
        u[0], u[-1] = a, b

    shape = u[1:-1].shape
    precond = _banded_precond(n - 1, h, constants.C_W ** 2)

    def eg(x):
        full = np.vstack([a, x.reshape(shape), b])
        E, g = _interior_energy_grad(p, full, h)
        return E, g.ravel()

    def pre(g):
        return precond(g.reshape(shape)).ravel()

    def resid(g):
        return float(np.max(np.abs(g))) / h

    def change(x, xn):
        full = np.vstack([a, x.reshape(shape), b])
        dfull = np.vstack([0 * a, (xn - x).reshape(shape), 0 * b])
        du, ddu = np.diff(full, axis=0), np.diff(dfull, axis=0)
        kin = float(np.sum(du * ddu) + 0.5 * np.sum(ddu * ddu)) / h
        return kin + h * float(np.sum(w_change(p, full[1:-1], full[1:-1] + dfull[1:-1])))

    x, rep = bb_descent(eg, u[1:-1].ravel(), pre, resid, tol, max_iter=max_iter, energy_change=change)
    u = np.vstack([a, x.reshape(shape), b])
    u = orient_profile(p, u)
    u = center_profile(p, s, u)
    return _finish(p, constants, L, s, u, rep.iterations)


def _finish(p, constants, L, s, u, iterations=0):
    h = float(s[1] - s[0])
    prof = HeteroclinicProfile(p, constants, float(L), s, u, 0.0, 0.0, 0.0, 0.0, iterations)
    prof.sigma = action(prof)
    prof.equipartition = equipartition_residual(prof)
    prof.el_residual = el_residual(p, u, h)
    prof.tail_rate = tail_rate(prof)
    return prof


def profile_from_samples(p, s, u, constants=None) -> HeteroclinicProfile:
    """Wrap externally supplied samples (e.g. a closed-form solution)."""
    if constants is None:
        constants = estimate_constants(p)
    s = np.asarray(s, float)
    u = np.asarray(u, float).reshape(len(s), p.m)
    return _finish(p, constants, float(s[-1]), s, u)


def orient_profile(p: Potential, u: np.ndarray) -> np.ndarray:
    """Make the profile end at omega a.

    A path ending at omega^{-1} a is replaced by ``omega u(-s)``.
    """
    b = p.omega @ p.a
    b_inv = np.linalg.solve(p.omega, p.a)
    if np.linalg.norm(u[-1] - b_inv) < np.linalg.norm(u[-1] - b) and not np.allclose(b, b_inv):
        u = (u[::-1] @ p.omega.T)
    return u


def equidistance_point(p: Potential, s, u) -> float:
    a, b = p.a, p.omega @ p.a
    f = np.linalg.norm(u - a, axis=1) - np.linalg.norm(u - b, axis=1)
    k = np.nonzero((f[:-1] < 0) & (f[1:] >= 0))[0]
    if len(k) == 0:
        return 0.0
    k = k[0]
    return float(s[k] - f[k] * (s[k + 1] - s[k]) / (f[k + 1] - f[k]))


def center_profile(p: Potential, s, u) -> np.ndarray:
    """Translate so the equidistance point sits at s = 0 (cubic resampling)."""
    s0 = equidistance_point(p, s, u)
    h = s[1] - s[0]
    if abs(s0) < 1e-9 * h:
        return u
    spline = CubicSpline(s, u, axis=0)
    t = np.clip(s + s0, s[0], s[-1])
    out = spline(t)
    out[0], out[-1] = u[0], u[-1]
    return out


def action(profile: HeteroclinicProfile) -> float:
    """sigma = integral of |u'|^2 (centered differences, trapezoid rule)."""
    u, h = profile.u, profile.h
    if len(u) < 3:
        return 0.0
    du = np.gradient(u, h, axis=0)
    q = np.sum(du * du, axis=1)
    return float(h * (q.sum() - 0.5 * (q[0] + q[-1])))


def equipartition_residual(profile: HeteroclinicProfile) -> float:
    """max over interior nodes of | |u'|^2 / 2 - W(u) |."""
    u, h = profile.u, profile.h
    du = (u[2:] - u[:-2]) / (2 * h)
    kin = 0.5 * np.sum(du * du, axis=1)
    return float(np.max(np.abs(kin - eval_w(profile.potential, u[1:-1]))))


def tail_rate(profile: HeteroclinicProfile) -> float:
    """Decay rate of |u - omega a| fitted on the last quarter of the grid.

    Nodes within two decay lengths of the pinned end are excluded, since the
    pinning bends the tail there.
    """
    p = profile.potential
    b = p.omega @ p.a
    s = profile.s
    L = profile.L
    dist = np.linalg.norm(profile.u - b, axis=1)
    cut = L - 2.0 / profile.constants.c_W
    mask = (s >= L / 2) & (s <= cut) & (dist > 1e-9)
    if mask.sum() < 5:
        mask = (s >= L / 2) & (dist > 1e-12)
    if mask.sum() < 2:
        return float("nan")
    slope = np.polyfit(s[mask], np.log(dist[mask]), 1)[0]
    return float(-slope)


def evaluate_profile(profile: HeteroclinicProfile, t):
    """Linear interpolation of the stored profile; beyond [-L, L] the
    deviation from the end well is continued with the fitted tail rate."""
    t = np.asarray(t, dtype=float)
    s, u = profile.s, profile.u
    out = np.empty(t.shape + (u.shape[1],))
    for k in range(u.shape[1]):
        out[..., k] = np.interp(t, s, u[:, k])
    k_rate = profile.tail_rate if np.isfinite(profile.tail_rate) and profile.tail_rate > 0 \
        else profile.constants.c_W
    L = profile.L
    p = profile.potential
    a, b = p.a, p.omega @ p.a
    # the continuation starts two decay lengths inside the grid, before the
    # pinned ends bend the profile
    anchor = max(L - 2.0 / k_rate, 0.0)
    right = t > anchor
    if np.any(right):
        ua = np.array([np.interp(anchor, s, u[:, k]) for k in range(u.shape[1])])
        out[right] = b + (ua - b) * np.exp(-k_rate * (t[right] - anchor))[..., None]
    left = t < -anchor
    if np.any(left):
        ua = np.array([np.interp(-anchor, s, u[:, k]) for k in range(u.shape[1])])
        out[left] = a + (ua - a) * np.exp(k_rate * (t[left] + anchor))[..., None]
    return out


def crossing_times(profile: HeteroclinicProfile, delta: float):
    """(t_delta, t^delta): last exit from B_delta(a), first entry into B_delta(omega a)."""
    c = profile.constants
    if delta > c.delta_W * (1 + 1e-12) or delta <= 0:
        raise ParameterError(f"delta = {delta} outside (0, delta_W = {c.delta_W}]")
    p = profile.potential
    s, u = profile.s, profile.u
    da = np.linalg.norm(u - p.a, axis=1) - delta
    db = np.linalg.norm(u - p.omega @ p.a, axis=1) - delta
    inside_a = np.nonzero(da <= 0)[0]
    if len(inside_a) == 0:
        raise ParameterError("profile never inside B_delta(a); enlarge L")
    i = inside_a[-1]
    t_low = s[i] + (s[i + 1] - s[i]) * (-da[i]) / (da[i + 1] - da[i])
    inside_b = np.nonzero(db <= 0)[0]
    if len(inside_b) == 0:
        raise ParameterError("profile never inside B_delta(omega a); enlarge L")
    j = inside_b[0]
    t_high = s[j - 1] + (s[j] - s[j - 1]) * db[j - 1] / (db[j - 1] - db[j])
    return float(t_low), float(t_high)


def min_delta(profile: HeteroclinicProfile) -> float:
    """Smallest delta for which both crossings lie inside the grid and away
    from the pinned ends."""
    p = profile.potential
    s, u = profile.s, profile.u
    k = profile.tail_rate if profile.tail_rate > 0 else profile.constants.c_W
    cut = profile.L - 2.0 / k
    i = np.searchsorted(s, -cut)
    j = np.searchsorted(s, cut)
    return float(max(np.linalg.norm(u[i] - p.a), np.linalg.norm(u[j] - p.omega @ p.a)))


@dataclass
class PeriodicSeed:
    """One fundamental segment of the equivariant seed u^delta."""

    t: np.ndarray
    u: np.ndarray
    delta: float
    tau: float
    t_low: float
    t_high: float
    z_plus: np.ndarray
    z_minus: np.ndarray
    bridge_energy: float
    segment_energy: float
    omega: np.ndarray

    @property
    def segment_length(self) -> float:
        return float(self.t_high - self.t_low + self.tau)

    def full_period(self, folds: int):
        """Samples over ``folds`` segments (the full period), by equivariance."""
        ts, us = [], []
        u = self.u[:-1]
        T = self.segment_length
        g = np.eye(len(self.omega))
        for j in range(folds):
            ts.append(self.t[:-1] + j * T)
            us.append(u @ g.T)
            g = self.omega @ g
        ts.append(np.array([folds * T]))
        us.append((g @ self.u[0])[None])
        return np.concatenate(ts), np.vstack(us)


def _bridge_energy(p, z_minus, z_plus, T, n=2001):
    if T <= 0:
        return 0.0
    t = np.linspace(0, T, n)
    path = z_minus + np.outer(t / T, z_plus - z_minus)
    kin = 0.5 * np.sum((z_plus - z_minus) ** 2) / T
    w = eval_w(p, path)
    return float(kin + np.trapezoid(w, t))


def build_periodic_seed(profile: HeteroclinicProfile, delta: float, N: int | None = None,
                        samples_per_unit: float | None = None, bridge_length: float | None = None) -> PeriodicSeed:
    """Linear bridge z_- -> z_+ followed by the heteroclinic piece on
    [t_delta, t^delta]; ``omega * start == end`` by construction.

    ``bridge_length`` overrides tau (it must be >= tau); a longer bridge is
    used when the requested period exceeds what the stored profile resolves.
    """
    p = profile.potential
    c = profile.constants
    om = p.omega
    t_low, t_high = crossing_times(profile, delta)
    z_plus = profile(np.array([t_low]))[0]
    end = profile(np.array([t_high]))[0]
    z_minus = np.linalg.solve(om, end)
    tau = float(np.linalg.norm(z_plus - z_minus) / (c.C_W * delta))
    T = tau if bridge_length is None else max(float(bridge_length), tau)
    h = profile.h if samples_per_unit is None else 1.0 / samples_per_unit
    nb = max(int(np.ceil(T / h)), 1) if T > 0 else 0
    nh = max(int(np.ceil((t_high - t_low) / h)), 2)
    tb = np.linspace(0, T, nb + 1)[:-1] if nb else np.empty(0)
    th = np.linspace(t_low, t_high, nh + 1)
    ub = z_minus + np.outer(tb / T, z_plus - z_minus) if nb else np.empty((0, p.m))
    uh = profile(th)
    uh[-1] = end
    t = np.concatenate([tb, th - t_low + T])
    u = np.vstack([ub, uh])
    u[0] = z_minus if nb else uh[0]
    bridge = _bridge_energy(p, z_minus, z_plus, T)
    hetero = chain_energy(p, profile(np.linspace(t_low, t_high, 20001)), (t_high - t_low) / 20000)
    seed = PeriodicSeed(t, u, float(delta), T, t_low, t_high, z_plus, z_minus,
                        bridge, bridge + hetero, om)
    return seed


def seed_delta_for_radius(profile: HeteroclinicProfile, r: float, folds: int):
    """Solve ``r = folds * (t^delta - t_delta + tau) / (2 pi)`` for delta by bisection.

    Returns ``(delta, bridge_length)``.  When r exceeds what the stored
    profile can represent, delta saturates at the smallest resolvable value
    and the bridge is lengthened to make up the period.
    """
    c = profile.constants
    target = 2 * np.pi * r / folds

    def seg_len(d):
        tl, th = crossing_times(profile, d)
        z_plus = profile(np.array([tl]))[0]
        z_minus = np.linalg.solve(profile.potential.omega, profile(np.array([th]))[0])
        tau = np.linalg.norm(z_plus - z_minus) / (c.C_W * d)
        return th - tl + tau, tau

    hi = c.delta_W
    L_hi, _ = seg_len(hi)
    if L_hi > target:
        rbar = r_bar(profile, folds)
        raise ParameterError(f"r = {r} below the existence threshold r_bar = {rbar:.4g}")
    lo = max(min_delta(profile), 1e-300)
    L_lo, tau_lo = seg_len(lo)
    if L_lo < target:
        return lo, tau_lo + (target - L_lo)
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        Lm, _ = seg_len(mid)
        if Lm > target:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1 < 1e-13:
            break
    d = hi
    Ld, tau = seg_len(d)
    return float(d), float(tau + (target - Ld))


def r_bar(profile: HeteroclinicProfile, folds: int) -> float:
    """Existence threshold for periodic minimizers: folds/(2 pi) * (t^dW - t_dW + 2/C_W)."""
    c = profile.constants
    tl, th = crossing_times(profile, c.delta_W)
    return float(folds / (2 * np.pi) * (th - tl + 2.0 / c.C_W))


def segment_lower_bound(sigma: float, C_W: float, delta_minus: float, delta_plus: float,
                        delta_W: float | None = None) -> float:
    """Certified lower bound sigma - C_W (delta_-^2 + delta_+^2) / 2."""
    for d in (delta_minus, delta_plus):
        if d < 0 or (delta_W is not None and d > delta_W * (1 + 1e-12)):
            raise ParameterError(f"delta = {d} outside [0, delta_W]")
    return float(sigma - 0.5 * C_W * (delta_minus ** 2 + delta_plus ** 2))
