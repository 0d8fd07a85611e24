"""Structure of computed minimizers: bad radii, layer angles, interface cells,
minimal polygonal spine, transverse energies, decay and pointwise checks."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import connect1d
from .disk2d import EquivariantField, gauge_rotate, radial_kinetic, restrict_fiber
from .errors import ConstructionError, InsufficientDataError, ParameterError
from .fiber import AnalysisParams, FiberClass, classify_fiber
from .potential import eval_w

GOLDEN = (math.sqrt(5) - 1) / 2


def circ_diff(a, b, period):
    """Signed difference a - b folded into [-period/2, period/2)."""
    return (np.asarray(a) - np.asarray(b) + period / 2) % period - period / 2


# ---------------------------------------------------------------- bad radii


@dataclass
class SigmaSet:
    radii: np.ndarray
    flags: np.ndarray
    measure: float
    delta: float
    alpha: float
    classes: list = field(repr=False, default_factory=list)
    dr: float = 0.0

    def contains(self, r: float) -> bool:
        """True when the grid radius nearest to r is flagged (or below r_delta)."""
        if len(self.radii) == 0 or r < self.radii[0] - 0.5 * self.dr:
            return True
        i = int(np.argmin(np.abs(self.radii - r)))
        return bool(self.flags[i])


def detect_sigma(f: EquivariantField, params: AnalysisParams) -> SigmaSet:
    g = f.grid
    radii = g.r[g.r >= params.r_delta]
    classes = [classify_fiber(restrict_fiber(f, r), params) for r in radii]
    flags = np.array([c.tag != "VSTAR" for c in classes], dtype=bool)
    return SigmaSet(radii, flags, float(g.dr * flags.sum()), params.delta, params.alpha,
                    classes, g.dr)


def sigma_bound(C2: float, params: AnalysisParams) -> float:
    return C2 / params.delta ** (1 + params.alpha)


def back_solve_C2(C0: float, C1: float, params: AnalysisParams) -> float:
    """Constant of the bad-set bound, from measured energy defects C0, C1."""
    return 2 * max(C0, 0.0) + max(C1, 0.0) + params.folds * params.sigma * params.r_delta


# ---------------------------------------------------------------- layer angles


@dataclass
class ThetaMap:
    r: np.ndarray
    theta: np.ndarray
    width: np.ndarray  # transition width (arc length) per radius
    nu: float
    sector: float
    dtheta: float

    @property
    def half_bracket(self) -> np.ndarray:
        return self.nu / (2 * self.r)

    def at(self, r: float) -> float:
        i = int(np.argmin(np.abs(self.r - r)))
        return float(self.theta[i])


def theta_map(f: EquivariantField, sigma: SigmaSet, params: AnalysisParams, nu=None) -> ThetaMap:
    """Layer angles off the bad set.

    ``nu`` sets the bracket scale: a number, ``"bound"`` for the class bound
    ``params.nu``, or None for the largest measured transition width.
    """
    keep = ~sigma.flags
    cls = [c for c, k in zip(sigma.classes, keep) if k]
    r = sigma.radii[keep]
    th = np.array([c.theta_r for c in cls], dtype=float)
    w = np.array([c.s_transition for c in cls], dtype=float)
    if nu is None:
        nu = float(w.max()) if len(w) else params.nu
    elif nu == "bound":
        nu = params.nu
    return ThetaMap(r, th, w, float(nu), f.grid.sector, f.grid.dtheta)


def layer_gauge(f: EquivariantField, params: AnalysisParams):
    """Rotate the field so the layer angle at the outermost structured radius is 0."""
    sig = detect_sigma(f, params)
    tm = theta_map(f, sig, params)
    if len(tm.r) == 0:
        raise InsufficientDataError("no structured radius to fix the gauge")
    return gauge_rotate(f, tm.theta[-1])


def c_hat(f: EquivariantField, params: AnalysisParams) -> float:
    """Lipschitz constant with the measured radial kinetic energy in place of 2(C0 + C1)."""
    p = f.potential
    a = p.a
    om_last = np.linalg.matrix_power(p.omega, p.N - 1)
    gap = np.linalg.norm(om_last @ a - a) - 2 * params.delta_prime
    if gap <= 0:
        raise ParameterError("c*delta^alpha too large for the Lipschitz constant")
    return radial_kinetic(f) / (p.N * gap ** 2)


@dataclass
class LipschitzReport:
    pairs_checked: int
    violations: list
    cap_violations: list
    c_hat: float
    beta: float

    def to_dict(self):
        return {"pairs_checked": self.pairs_checked, "violations": len(self.violations),
                "cap_violations": len(self.cap_violations), "c_hat": self.c_hat, "beta": self.beta}


def lipschitz_violations(tm: ThetaMap, params: AnalysisParams, chat: float, beta: float = 0.5,
                         slack: float | None = None) -> LipschitzReport:
    """Pairs (r*, r) with r in (r*(1-beta), r*(1+beta)) whose layer angles differ
    by more than nu/r* + nu/r + chat |ln(r/r*)| + slack; plus radii where the
    bracket [theta_r^-, theta_r^+] spans a full 2 pi/N."""
    if not 0 < beta < 1:
        raise ParameterError("beta must lie in (0, 1)")
    slack = tm.dtheta if slack is None else slack
    r, th, nu = tm.r, tm.theta, tm.nu
    viol, checked = [], 0
    for i in range(len(r)):
        lo, hi = r[i] * (1 - beta), r[i] * (1 + beta)
        js = np.nonzero((r > lo) & (r < hi) & (np.arange(len(r)) != i))[0]
        if len(js) == 0:
            continue
        checked += len(js)
        d = np.abs(circ_diff(th[js], th[i], tm.sector))
        bound = nu / r[i] + nu / r[js] + chat * np.abs(np.log(r[js] / r[i])) + slack
        for j in js[d > bound]:
            viol.append((float(r[i]), float(r[j])))
    cap = [float(x) for x in r if nu / x >= 2 * np.pi / params.N]
    return LipschitzReport(checked, viol, cap, float(chat), beta)


# ---------------------------------------------------------------- interface


def polar(r, theta):
    return np.array([r * np.cos(theta), r * np.sin(theta)])


@dataclass
class InterfaceGraph:
    c1: int
    c_tilde: float
    c_hat: float
    nu: float
    r: np.ndarray  # r_1 .. r_{n+1}
    mu: np.ndarray
    lam: np.ndarray
    theta: np.ndarray  # layer angle at each r_j
    p_minus: np.ndarray  # angles
    p_plus: np.ndarray
    q_minus: np.ndarray  # q_j defined for j >= 2 (entry 0 is nan)
    q_plus: np.ndarray
    beta_max: float
    c0: float
    C0: float

    @property
    def n(self) -> int:
        return len(self.r) - 1

    def arcs(self):
        """(r_j, theta_minus, theta_plus) for the spine arcs j = 2 .. n+1."""
        return [(self.r[j], self.p_minus[j], self.p_plus[j]) for j in range(1, len(self.r))]

    def cell_polygon(self, j: int, n_arc: int = 16) -> np.ndarray:
        """Closed polygon of cell j (0-based index into r, needs j+1 < len(r))."""
        a1 = np.linspace(self.p_minus[j], self.p_plus[j], n_arc)
        a2 = np.linspace(self.q_plus[j + 1], self.q_minus[j + 1], n_arc)
        inner = np.column_stack([self.r[j] * np.cos(a1), self.r[j] * np.sin(a1)])
        outer = np.column_stack([self.r[j + 1] * np.cos(a2), self.r[j + 1] * np.sin(a2)])
        return np.vstack([inner, outer])

    def to_dict(self) -> dict:
        def pts(r, t):
            return [[float(x), float(y)] for x, y in zip(r * np.cos(t), r * np.sin(t))]

        return {
            "c1": self.c1, "c_tilde": self.c_tilde, "c_hat": self.c_hat, "nu": self.nu,
            "r": self.r.tolist(), "mu": self.mu.tolist(), "lambda": self.lam.tolist(),
            "theta": self.theta.tolist(),
            "p_minus": pts(self.r, self.p_minus), "p_plus": pts(self.r, self.p_plus),
            "q_minus": pts(self.r[1:], self.q_minus[1:]), "q_plus": pts(self.r[1:], self.q_plus[1:]),
            "beta_max": self.beta_max, "c0": self.c0, "C0": self.C0,
        }


def choose_c1(r_delta: float, dr: float) -> int:
    """Smallest integer c1 >= 0 with (1 + c1)^2 >= max(r_delta, 4 dr)."""
    target = max(r_delta, 4 * dr)
    return max(0, int(math.ceil(math.sqrt(target) - 1 - 1e-12)))


def build_interface(tm: ThetaMap, sigma: SigmaSet, params: AnalysisParams, chat: float,
                    R: float, dr: float, c1: int | None = None, c_tilde: float | None = None,
                    kbar: float | None = None, theta_fn=None) -> InterfaceGraph:
    """Schedule r_j = (j + c1)^2 - mu_j with layer-angle cells around the spine.

    ``theta_fn(r)`` overrides the layer angle lookup (used for synthetic maps).
    """
    if c1 is None:
        c1 = choose_c1(params.r_delta, dr)
    if c_tilde is None:
        c_tilde = 2.0 / (kbar if kbar else params.c_W)
    r_max = R - 0.5 * dr
    rs, mus = [], []
    j = 1
    while (j + c1) ** 2 <= r_max + 1e-12:
        base = (j + c1) ** 2
        mu = 0.0
        while sigma.contains(base - mu):
            mu += dr
            if mu > sigma.measure + 1e-12 or base - mu <= 0:
                raise ConstructionError(f"no structured radius for schedule entry j={j} "
                                        f"near r={base:.4g} within |Sigma|={sigma.measure:.4g}")
        # snap to the grid radius carrying the layer angle
        r_j = float(tm.r[np.argmin(np.abs(tm.r - (base - mu)))]) if theta_fn is None else base - mu
        rs.append(r_j)
        mus.append(base - r_j)
        j += 1
    rs = np.array(rs)
    if len(rs) < 4:
        raise ConstructionError(f"only {len(rs)} schedule radii fit in R={R}; need n >= 3 cells")
    if np.any(np.diff(rs) <= 0):
        raise ConstructionError("schedule radii not strictly increasing")
    nu = tm.nu
    lam = c_tilde * np.log(rs)
    th = np.array([theta_fn(x) if theta_fn else tm.at(x) for x in rs])
    # unwrap layer angles along the schedule so cells do not jump across the seam
    th = th[0] + np.concatenate([[0.0], np.cumsum(circ_diff(th[1:], th[:-1], tm.sector))])
    half_p = 1.5 * nu / rs + lam / rs
    pm, pp = th - half_p, th + half_p
    qm = np.full_like(rs, np.nan)
    qp = np.full_like(rs, np.nan)
    for k in range(1, len(rs)):
        half_q = 1.5 * nu / rs[k - 1] + nu / rs[k] + chat * np.log(rs[k] / rs[k - 1]) + lam[k] / rs[k]
        qm[k], qp[k] = th[k - 1] - half_q, th[k - 1] + half_q
    gaps = np.diff(rs)
    ratio = gaps / np.sqrt(rs[:-1])
    return InterfaceGraph(int(c1), float(c_tilde), float(chat), float(nu), rs, np.array(mus), lam, th,
                          pm, pp, qm, qp, float(np.max(gaps / rs[:-1])), float(ratio.min()),
                          float(ratio.max()))


# ---------------------------------------------------------------- minimal curve


@dataclass
class MinimalCurve:
    radii: np.ndarray
    angles: np.ndarray
    length: float
    on_endpoint: np.ndarray  # -1 at p^-, +1 at p^+, 0 interior, 2 on a pinned (zero-width) arc

    @property
    def vertices(self) -> np.ndarray:
        return np.column_stack([self.radii * np.cos(self.angles), self.radii * np.sin(self.angles)])

    @property
    def directions(self) -> np.ndarray:
        d = np.diff(self.vertices, axis=0)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    @property
    def normals(self) -> np.ndarray:
        t = self.directions
        return np.column_stack([-t[:, 1], t[:, 0]])

    def to_dict(self):
        return {"vertices": self.vertices.tolist(), "length": self.length,
                "on_endpoint": self.on_endpoint.tolist()}


def _polyline_length(r, a):
    x, y = r * np.cos(a), r * np.sin(a)
    return float(np.sum(np.hypot(np.diff(x), np.diff(y))))


def _dp(arcs, K):
    """Layered shortest path with K points per arc (single point for fixed ends)."""
    layers = []
    for r, lo, hi in arcs:
        ang = np.array([0.5 * (lo + hi)]) if lo == hi else np.linspace(lo, hi, K)
        layers.append((r, ang))
    cost = np.zeros(len(layers[0][1]))
    back = []
    for (r0, a0), (r1, a1) in zip(layers[:-1], layers[1:]):
        p0 = np.column_stack([r0 * np.cos(a0), r0 * np.sin(a0)])
        p1 = np.column_stack([r1 * np.cos(a1), r1 * np.sin(a1)])
        d = np.linalg.norm(p1[None, :, :] - p0[:, None, :], axis=-1)
        tot = cost[:, None] + d
        arg = np.argmin(tot, axis=0)
        back.append(arg)
        cost = tot[arg, np.arange(len(a1))]
    k = int(np.argmin(cost))
    idx = [k]
    for arg in reversed(back):
        k = int(arg[k])
        idx.append(k)
    idx.reverse()
    return np.array([layers[i][1][k] for i, k in enumerate(idx)]), float(cost.min())


def _golden(fun, lo, hi, tol=1e-13):
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    x = 0.5 * (a + b)
    best = min([(fun(lo), lo), (fun(x), x), (fun(hi), hi)])
    return best[1]


def _free_bend(r, ang, arcs) -> float:
    """Largest turning angle at vertices strictly inside their arcs."""
    x = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
    t = np.diff(x, axis=0)
    worst = 0.0
    for j in range(1, len(arcs) - 1):
        _, lo, hi = arcs[j]
        if hi - lo < 2e-9 or ang[j] - lo < 1e-9 or hi - ang[j] < 1e-9:
            continue
        t0, t1 = t[j - 1], t[j]
        worst = max(worst, abs(math.atan2(t0[0] * t1[1] - t0[1] * t1[0], float(np.dot(t0, t1)))))
    return worst


def minimal_curve(ig: InterfaceGraph | None = None, K: int = 65, arcs=None, check_kkt: bool = True,
                  sweep_tol: float = 1e-10, max_sweeps: int = 10000) -> MinimalCurve:
    """Shortest polyline from the first arc center to the last arc center with one
    vertex on every intermediate arc.

    ``arcs`` (list of (r, theta_lo, theta_hi)) replaces ``ig`` for direct use.
    """
    if K < 65:
        raise ParameterError("K must be >= 65")
    if arcs is None:
        arcs = ig.arcs()
        # the spine joins the layer points at r_2 and r_{n+1}
        arcs[0] = (arcs[0][0], ig.theta[1], ig.theta[1])
        arcs[-1] = (arcs[-1][0], ig.theta[-1], ig.theta[-1])
    arcs = [(float(r), float(lo), float(hi)) for r, lo, hi in arcs]
    r = np.array([a[0] for a in arcs])
    ang, _ = _dp(arcs, K)
    length = _polyline_length(r, ang)
    for _ in range(max_sweeps):
        old = length
        for j in range(1, len(arcs) - 1):
            _, lo, hi = arcs[j]
            if hi <= lo:
                continue
            p_prev = polar(r[j - 1], ang[j - 1])
            p_next = polar(r[j + 1], ang[j + 1])

            def local(t, rj=r[j]):
                x = polar(rj, t)
                return np.linalg.norm(x - p_prev) + np.linalg.norm(p_next - x)

            ang[j] = _golden(local, lo, hi)
        length = _polyline_length(r, ang)
        # coordinate sweeps converge linearly, so also wait for the free vertices to straighten
        if old - length < sweep_tol and _free_bend(r, ang, arcs) < 1e-7:
            break
    ends = np.zeros(len(arcs), dtype=int)
    for j, (_, lo, hi) in enumerate(arcs):
        if hi - lo < 2e-9:
            ends[j] = 2
        else:
            if ang[j] - lo < 1e-9:
                ends[j] = -1
            elif hi - ang[j] < 1e-9:
                ends[j] = 1
    mc = MinimalCurve(r, ang, length, ends)
    if check_kkt:
        kkt_check(mc)
    return mc


def kkt_check(mc: MinimalCurve, angle_tol: float = 1e-6) -> None:
    """Interior vertices are straight; corners sit at an arc end turning toward it.
    Vertices on zero-width arcs are pinned and may turn either way."""
    t = mc.directions
    for j in range(1, len(mc.radii) - 1):
        t0, t1 = t[j - 1], t[j]
        cross = t0[0] * t1[1] - t0[1] * t1[0]
        turn = math.atan2(cross, float(np.dot(t0, t1)))
        e = mc.on_endpoint[j]
        if e == 0 and abs(turn) > angle_tol:
            raise ConstructionError(f"spine vertex {j} bends by {turn:.3g} rad inside its arc")
        if e == -1 and turn > angle_tol:
            raise ConstructionError(f"spine vertex {j} at the lower arc end turns the wrong way")
        if e == 1 and turn < -angle_tol:
            raise ConstructionError(f"spine vertex {j} at the upper arc end turns the wrong way")


def brute_force_length(arcs, K: int = 1025) -> float:
    """Exhaustive minimum over K points per free arc (small instances only)."""
    r = np.array([a[0] for a in arcs])
    grids = [np.array([0.5 * (lo + hi)]) if hi <= lo else np.linspace(lo, hi, K) for _, lo, hi in arcs]
    pts = [np.column_stack([rr * np.cos(g), rr * np.sin(g)]) for rr, g in zip(r, grids)]
    cost = np.zeros(len(pts[0]))
    for p0, p1 in zip(pts[:-1], pts[1:]):
        d = np.linalg.norm(p1[None] - p0[:, None], axis=-1)
        cost = np.min(cost[:, None] + d, axis=0)
    return float(cost.min())


def length_excess(mc: MinimalCurve, R: float) -> float:
    return float(mc.length - R)


def fit_c_ring(mc: MinimalCurve, ig: InterfaceGraph | None = None, r_min: float | None = None,
               dtheta: float = 0.0) -> float:
    """Smallest C with |theta - theta(gamma_end)| + dtheta <= C / sqrt(r_j) over
    the spine vertices (dtheta is the angular resolution).

    Passing ``ig`` widens the deviation by the cell half-widths, giving the
    larger corridor that contains the whole interface cells.
    """
    sel = mc.radii >= (r_min if r_min is not None else mc.radii[0])
    dev = np.abs(mc.angles - mc.angles[-1]) + dtheta
    if ig is not None:
        half = 0.5 * (ig.p_plus[1:] - ig.p_minus[1:])
        dev = dev + half
    C = float(np.max(dev[sel] * np.sqrt(mc.radii[sel])))
    if not np.isfinite(C):
        raise InsufficientDataError("angular confinement fit failed")
    return C


def default_ball_radius(f: EquivariantField, params: AnalysisParams, kbar: float) -> float:
    """Ball radius for the pointwise check: 1.5 times the linearized tail depth
    ln(c delta^alpha / (2 delta)) / kbar, and at least four grid cells."""
    depth = math.log(params.delta_prime / (2 * params.delta)) / kbar
    return max(4 * grid_resolution(f), 1.5 * depth)


# ---------------------------------------------------------------- sampling


class DiskSampler:
    """Bilinear (r, theta) interpolation of values on the full circle.

    Built from an equivariant field (sector images via omega) or from a
    constant vector for diagnostic, non-equivariant inputs.
    """

    def __init__(self, r, theta, u, potential):
        self.r, self.theta, self.u, self.p = r, theta, u, potential
        self.dtheta = theta[1] - theta[0]
        self.dr = r[1] - r[0] if len(r) > 1 else r[0] * 2

    @classmethod
    def from_field(cls, f: EquivariantField):
        r, th, u = f.full_disk()
        return cls(r, th, u, f.potential)

    @classmethod
    def constant(cls, value, potential, R: float, n_r: int = 64, n_theta: int = 256):
        r = (np.arange(n_r) + 0.5) * R / n_r
        th = np.arange(n_theta) * 2 * np.pi / n_theta
        u = np.broadcast_to(np.asarray(value, float), (n_r, n_theta, len(value))).copy()
        return cls(r, th, u, potential)

    def __call__(self, xy):
        xy = np.atleast_2d(xy)
        rad = np.hypot(xy[:, 0], xy[:, 1])
        th = np.mod(np.arctan2(xy[:, 1], xy[:, 0]), 2 * np.pi)
        nt = len(self.theta)
        ft = th / self.dtheta
        k0 = np.floor(ft).astype(int) % nt
        k1 = (k0 + 1) % nt
        wt = (ft - np.floor(ft))[:, None]
        # radial: center value 0 below r_0
        fr = rad / self.dr - 0.5
        i0 = np.floor(fr).astype(int)
        wr = (fr - i0)[:, None]
        n_r = len(self.r)

        def row(i, k):
            ic = np.clip(i, 0, n_r - 1)
            v = self.u[ic, k]
            return np.where((i < 0)[:, None], 0.0, v)

        v0 = (1 - wt) * row(i0, k0) + wt * row(i0, k1)
        v1 = (1 - wt) * row(i0 + 1, k0) + wt * row(i0 + 1, k1)
        out = (1 - wr) * v0 + wr * v1
        core = i0 < 0  # between the pinned center and r_0
        out[core] = (v1 * np.minimum(rad / (0.5 * self.dr), 1.0)[:, None])[core]
        beyond = i0 >= n_r - 1
        out[beyond] = ((1 - wt) * row(np.full_like(i0, n_r - 1), k0)
                       + wt * row(np.full_like(i0, n_r - 1), k1))[beyond]
        return out


# ---------------------------------------------------------------- transverse energy


def _inside(poly, pts):
    """Even-odd point-in-polygon test."""
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    xj, yj = poly[-1]
    for xi, yi in poly:
        cond = ((yi > y) != (yj > y)) & (x < (xj - xi) * (y - yi) / (yj - yi + 1e-300) + xi)
        inside ^= cond
        xj, yj = xi, yi
    return inside


def segment_energy(sampler, p, x0, x1, n: int = 400) -> float:
    t = np.linspace(0.0, 1.0, n)
    pts = x0[None] + t[:, None] * (x1 - x0)[None]
    u = sampler(pts)
    ds = np.linalg.norm(x1 - x0) / (n - 1)
    du = np.diff(u, axis=0)
    w = eval_w(p, u)
    return float(0.5 * np.sum(du * du) / ds + ds * (0.5 * w[0] + w[1:-1].sum() + 0.5 * w[-1]))


@dataclass
class TransverseTable:
    r: np.ndarray
    s: np.ndarray
    J: np.ndarray
    seg_len: np.ndarray
    lower_bound_checked: int
    skipped: int

    def integral(self) -> float:
        if len(self.s) < 2:
            return 0.0
        return float(np.trapezoid(self.J, self.s))


def transverse_profile(sampler, mc: MinimalCurve, ig: InterfaceGraph, params: AnalysisParams | None = None,
                       samples_per_cell: int = 8, constants=None, total_energy: float | None = None,
                       N: int | None = None, n_line: int = 400, check_disjoint: bool = True,
                       bound_rtol: float = 1e-3) -> TransverseTable:
    """1D energies across the spine, on normal segments clipped to their cell.

    Segments whose ends sit near two different wells are checked against the
    continuum segment bound, less ``bound_rtol * sigma`` for the quadrature of
    an interpolated grid field.
    """
    if isinstance(sampler, EquivariantField):
        sampler = DiskSampler.from_field(sampler)
    p = sampler.p
    V = mc.vertices
    rows, checked, skipped = [], 0, 0
    s_acc = 0.0
    for j in range(len(V) - 1):
        seg = V[j + 1] - V[j]
        L = float(np.linalg.norm(seg))
        t_hat = seg / L
        nrm = np.array([-t_hat[1], t_hat[0]])
        poly = ig.cell_polygon(j + 1)
        reach = 2 * float(np.max(np.linalg.norm(poly - V[j], axis=1)))
        prev_ends = []
        for k in range(samples_per_cell):
            tau = (k + 0.5) / samples_per_cell
            c = V[j] + tau * seg
            ts = np.linspace(-reach, reach, 4001)
            pts = c[None] + ts[:, None] * nrm[None]
            ins = _inside(poly, pts)
            mid = len(ts) // 2
            if not ins[mid]:
                skipped += 1
                warnings.warn("spine point outside its cell; transverse sample skipped", stacklevel=2)
                continue
            lo = mid
            while lo > 0 and ins[lo - 1]:
                lo -= 1
            hi = mid
            while hi < len(ts) - 1 and ins[hi + 1]:
                hi += 1
            if hi - lo < 2:
                skipped += 1
                warnings.warn("degenerate transverse segment skipped", stacklevel=2)
                continue
            x0, x1 = pts[lo], pts[hi]
            Jst = segment_energy(sampler, p, x0, x1, n_line)
            if check_disjoint:
                for y0, y1 in prev_ends:
                    if _segments_cross(x0, x1, y0, y1):
                        raise ConstructionError("transverse segments intersect inside a cell")
                prev_ends.append((x0, x1))
            if params is not None and constants is not None:
                u_end = sampler(np.vstack([x0, x1]))
                d0 = np.linalg.norm(u_end[0] - p.wells, axis=1)
                d1 = np.linalg.norm(u_end[1] - p.wells, axis=1)
                if d0.min() <= params.delta_prime and d1.min() <= params.delta_prime \
                        and np.argmin(d0) != np.argmin(d1):
                    lb = connect1d.segment_lower_bound(params.sigma, constants.C_W, float(d0.min()),
                                                       float(d1.min()))
                    checked += 1
                    if Jst < lb - bound_rtol * params.sigma:
                        raise ConstructionError(
                            f"transverse energy {Jst:.6g} below the segment bound {lb:.6g}")
            rows.append((float(np.linalg.norm(c)), s_acc + tau * L, Jst, float(np.linalg.norm(x1 - x0))))
        s_acc += L
    arr = np.array(rows) if rows else np.zeros((0, 4))
    table = TransverseTable(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], checked, skipped)
    if total_energy is not None and N is not None:
        if N * table.integral() > 1.05 * total_energy + 1e-9:
            raise ConstructionError("transverse energy exceeds the total energy budget")
    return table


def _segments_cross(a0, a1, b0, b1) -> bool:
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    o1, o2 = orient(a0, a1, b0), orient(a0, a1, b1)
    o3, o4 = orient(b0, b1, a0), orient(b0, b1, a1)
    return (o1 * o2 < 0) and (o3 * o4 < 0)


# ---------------------------------------------------------------- decay


@dataclass
class DecayFit:
    C_ring: float
    r_ring: float
    K: float
    k: float
    rms: float
    n_points: int

    def to_dict(self):
        return {"C_ring": self.C_ring, "r_ring": self.r_ring, "K": self.K, "k": self.k,
                "rms": self.rms, "n_points": self.n_points}


def min_r_ring(C_ring: float, folds: int) -> float:
    return (C_ring * folds) ** 2 / np.pi ** 2


def sector_distance(r, theta, C_ring, r_ring, width, n_boundary=4000, r_out=None):
    """Distance from points (r, theta) to the boundary of
    Q = {r > r_ring, C/sqrt(r) < theta < width - C/sqrt(r)} (outer rim excluded)."""
    r_out = r_out if r_out is not None else float(np.max(r)) * 1.5
    rb = np.linspace(r_ring, r_out, n_boundary)
    lower = polar(rb, C_ring / np.sqrt(rb)).T
    upper = polar(rb, width - C_ring / np.sqrt(rb)).T
    a0, a1 = C_ring / np.sqrt(r_ring), width - C_ring / np.sqrt(r_ring)
    arc = polar(np.full(n_boundary // 4, r_ring), np.linspace(a0, a1, n_boundary // 4)).T
    B = np.vstack([lower, upper, arc])
    X = polar(r, theta).T
    d = np.empty(len(X))
    for s in range(0, len(X), 2048):
        blk = X[s:s + 2048]
        d[s:s + 2048] = np.min(np.linalg.norm(blk[:, None] - B[None], axis=-1), axis=1)
    return d


def decay_fit(f: EquivariantField, C_ring: float, r_ring: float, theta0: float = 0.0,
              floor: float = 1e-12, r_max: float | None = None) -> DecayFit:
    """Fit log|u - a| = log K - k d(x, boundary of Q) over grid nodes inside Q.

    Q is the sector between the layer at theta0 and its image one sector later,
    shrunk by C_ring / sqrt(r) on each side and cut at r_ring.
    """
    g, p = f.grid, f.potential
    if r_ring < min_r_ring(C_ring, g.folds) - 1e-9:
        raise ParameterError(f"r_ring must be >= (C_ring hN)^2 / pi^2 = {min_r_ring(C_ring, g.folds):.4g}")
    rr, tt = g.coords()
    th = np.mod(tt - theta0, g.sector)
    width = g.sector
    r_max = g.R if r_max is None else r_max
    inside = (rr > r_ring) & (rr <= r_max) & (th > C_ring / np.sqrt(rr)) & (th < width - C_ring / np.sqrt(rr))
    # the well this sector converges to, read off at its outer midpoint
    k_mid = int(np.argmin(np.abs(np.mod(g.theta - theta0, g.sector) - width / 2)))
    well = p.wells[np.argmin(np.linalg.norm(p.wells - f.u[-1, k_mid], axis=1))]
    dist = np.linalg.norm(f.u - well, axis=-1)
    use = inside & (dist > floor)
    if use.sum() < 30:
        raise InsufficientDataError(f"only {int(use.sum())} usable nodes in the decay sector (need 30)")
    d = sector_distance(rr[use], th[use], C_ring, r_ring, width, r_out=g.R * 2)
    y = np.log(dist[use])
    A = np.column_stack([np.ones_like(d), -d])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return DecayFit(float(C_ring), float(r_ring), float(np.exp(coef[0])), float(coef[1]),
                    float(np.sqrt(np.mean(res ** 2))), int(use.sum()))


def decay_fit_values(d, dist, floor: float = 1e-12) -> tuple[float, float, float]:
    """Planted-data variant: fit (K, k, rms) from distances and |u - a| values."""
    d, dist = np.asarray(d, float), np.asarray(dist, float)
    use = dist > floor
    if use.sum() < 30:
        raise InsufficientDataError("fewer than 30 usable samples")
    A = np.column_stack([np.ones(use.sum()), -d[use]])
    y = np.log(dist[use])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return float(np.exp(coef[0])), float(coef[1]), float(np.sqrt(np.mean(res ** 2)))


# ---------------------------------------------------------------- pointwise estimate


@dataclass
class PointwiseReport:
    sampled: int
    tested: int
    violations: list
    l: float

    def to_dict(self):
        return {"sampled": self.sampled, "tested": self.tested, "violations": len(self.violations),
                "l": self.l}


def grid_resolution(f: EquivariantField) -> float:
    g = f.grid
    return max(g.dr, g.R * g.dtheta)


def pointwise_check(f: EquivariantField, sigma: SigmaSet, params: AnalysisParams, l: float,
                    sample_count: int = 200, seed: int = 0) -> PointwiseReport:
    """If every node of B_l(x0) off the bad annuli is within c delta^alpha of a
    well, then x0 itself must be within 2 delta of that well."""
    g, p = f.grid, f.potential
    if l < 4 * grid_resolution(f) - 1e-12:
        raise ParameterError(f"l = {l} below 4 grid cells ({4 * grid_resolution(f):.4g})")
    r_all, th_all, u_all = f.full_disk()
    rr, tt = np.meshgrid(r_all, th_all, indexing="ij")
    X, Y = rr * np.cos(tt), rr * np.sin(tt)
    bad_r = np.zeros(len(r_all), dtype=bool)
    bad_r[r_all < params.r_delta] = True
    for r, flag in zip(sigma.radii, sigma.flags):
        bad_r[np.argmin(np.abs(r_all - r))] |= flag
    dist_w = np.linalg.norm(u_all[..., None, :] - p.wells[None, None], axis=-1)
    near = dist_w <= params.delta_prime  # (n_r, n_theta_full, N)

    cand = np.argwhere(rr >= params.r_delta + l)
    rng = np.random.default_rng(seed)
    if len(cand) == 0:
        return PointwiseReport(0, 0, [], l)
    pick = cand[rng.choice(len(cand), size=min(sample_count, len(cand)), replace=False)]
    tested, viol = 0, []
    for i, k in pick:
        x0, y0 = X[i, k], Y[i, k]
        # restrict to radial band first
        band = np.nonzero(np.abs(r_all - r_all[i]) <= l)[0]
        sub = (X[band] - x0) ** 2 + (Y[band] - y0) ** 2 <= l * l
        sub &= ~bad_r[band][:, None]
        if not sub.any():
            continue
        for w in range(p.N):
            if np.all(near[band][..., w][sub]):
                tested += 1
                if dist_w[i, k, w] > 2 * params.delta:
                    viol.append({"r": float(r_all[i]), "theta": float(th_all[k]), "well": int(w),
                                 "dist": float(dist_w[i, k, w])})
                break
    return PointwiseReport(len(pick), tested, viol, l)


# ---------------------------------------------------------------- scalar saddle


@dataclass
class SaddleReport:
    seam_max: float
    signs: list
    alternating: bool

    def to_dict(self):
        return {"seam_max": self.seam_max, "signs": self.signs, "alternating": self.alternating}


def saddle_report(f: EquivariantField, theta0: float = 0.0, r_probe: float | None = None) -> SaddleReport:
    """Scalar saddle diagnostics: largest |u| on the sector seam rays through the
    origin (after a gauge shift theta0), and the sign of u at each sector bisector."""
    if f.potential.m != 1:
        raise ParameterError("saddle diagnostics need a scalar field")
    g = f.grid
    r_all, th_all, u_all = f.full_disk()
    u_all = u_all[..., 0]
    seams = theta0 + np.arange(g.folds) * g.sector
    cols = [int(np.argmin(np.abs(circ_diff(th_all, s, 2 * np.pi)))) for s in seams]
    seam_max = float(np.max(np.abs(u_all[:, cols])))
    i = int(np.argmin(np.abs(r_all - (g.R / 2 if r_probe is None else r_probe))))
    mids = [int(np.argmin(np.abs(circ_diff(th_all, s + g.sector / 2, 2 * np.pi)))) for s in seams]
    signs = [int(np.sign(u_all[i, k])) for k in mids]
    alternating = all(s != 0 for s in signs) and all(signs[j] == -signs[j - 1] for j in range(len(signs)))
    return SaddleReport(seam_max, signs, alternating)


# ---------------------------------------------------------------- pipeline


@dataclass
class AnalysisResult:
    report: dict
    theta: ThetaMap | None = None
    interface: InterfaceGraph | None = None
    curve: MinimalCurve | None = None
    errors: list = field(default_factory=list)

    def interface_dict(self) -> dict:
        out = self.interface.to_dict() if self.interface is not None else {}
        if self.curve is not None:
            out["gamma"] = self.curve.to_dict()
        return out


def analyze(f: EquivariantField, params: AnalysisParams, kbar: float, total: float | None = None,
            constants=None, c1=None, c_tilde=None, C_ring=None, r_ring=None, beta: float = 0.5,
            sample_count: int = 200, l: float | None = None, gauge: bool = True) -> AnalysisResult:
    """Run the structure checks on a converged field.

    Stages that cannot be carried out (for instance a disk too small for three
    interface cells) are recorded in ``errors`` with their stage name and the
    dependent report entries are left as None.
    """
    errors = []
    if gauge:
        f = layer_gauge(f, params)
    sig = detect_sigma(f, params)
    tm = theta_map(f, sig, params)
    ch = c_hat(f, params)
    lip = lipschitz_violations(tm, params, ch, beta=beta)
    rep = {
        "R": f.grid.R,
        "sigma_measure": sig.measure,
        "sigma_fraction": sig.measure / max(f.grid.R - params.r_delta, 1e-300),
        "lipschitz": lip.to_dict(),
        "gamma_length": None, "length_excess": None, "C_ring": None,
        "decay": None, "transverse": None,
    }
    ig = mc = None
    try:
        ig = build_interface(tm, sig, params, ch, f.grid.R, f.grid.dr, c1=c1, c_tilde=c_tilde, kbar=kbar)
        mc = minimal_curve(ig)
        rep["gamma_length"] = mc.length
        rep["length_excess"] = length_excess(mc, (ig.n + 1 + ig.c1) ** 2)
        rep["n_cells"] = ig.n
    except (ConstructionError, InsufficientDataError) as e:
        errors.append({"stage": "interface", "error": type(e).__name__, "message": str(e),
                       "exit_code": e.exit_code})
    if mc is not None:
        try:
            tp = transverse_profile(f, mc, ig, params, constants=constants, total_energy=total, N=f.potential.N)
            rep["transverse"] = {"integral": tp.integral(), "lower_bound_checked": tp.lower_bound_checked,
                                 "skipped": tp.skipped}
        except InsufficientDataError as e:
            errors.append({"stage": "transverse", "error": type(e).__name__, "message": str(e),
                           "exit_code": e.exit_code})
    Cr = C_ring
    if Cr is None and mc is not None:
        Cr = fit_c_ring(mc, dtheta=f.grid.dtheta)
    if Cr is not None:
        rep["C_ring"] = Cr
        rr = min_r_ring(Cr, f.grid.folds) if r_ring is None else r_ring
        try:
            rep["decay"] = decay_fit(f, Cr, rr).to_dict()
        except (InsufficientDataError, ParameterError) as e:
            errors.append({"stage": "decay", "error": type(e).__name__, "message": str(e),
                           "exit_code": e.exit_code})
    if l is None:
        l = default_ball_radius(f, params, kbar)
    rep["pointwise"] = pointwise_check(f, sig, params, l, sample_count=sample_count).to_dict()
    rep["errors"] = errors
    return AnalysisResult(rep, tm, ig, mc, errors)
