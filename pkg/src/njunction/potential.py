"""C_N-invariant multi-well potentials and their local constants.

Points of the target space are numpy arrays whose last axis has length ``m``
(``m = 1`` for the scalar case, ``m = 2`` for planar targets).  Every
evaluation routine broadcasts over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, HypothesisError, ParameterError

KINDS = ("polynomial-complex-well", "scalar-bistable", "user-polynomial")


@dataclass(frozen=True)
class Potential:
    """An admissible energy density W on R^m.

    ``coefficients`` is only used by ``user-polynomial`` and holds monomial
    terms ``(i, j, c)`` meaning ``c * x**i * y**j`` (``(i, c)`` when m = 1).
    The reference well is ``a = (well_radius, 0)`` (or ``+well_radius`` for
    m = 1) and the remaining wells are its images under the target rotation.
    """

    kind: str = "polynomial-complex-well"
    N: int = 3
    m: int = 2
    well_radius: float = 1.0
    coefficients: tuple = ()
    h: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown potential kind {self.kind!r}")
        if self.N < 2:
            raise ParameterError("symmetry order N must be >= 2")
        if self.h < 1:
            raise ParameterError("domain fold h must be >= 1")
        if self.m not in (1, 2):
            raise ParameterError("target dimension must be 1 or 2")
        if self.m == 1 and self.N != 2:
            raise ParameterError("scalar targets only support N = 2")
        if self.kind == "scalar-bistable" and self.m != 1:
            raise ParameterError("scalar-bistable requires m = 1")
        if self.kind == "polynomial-complex-well" and self.m != 2:
            raise ParameterError("polynomial-complex-well requires m = 2")
        if not self.well_radius > 0:
            raise ParameterError("well_radius must be positive")
        object.__setattr__(self, "coefficients", tuple(tuple(t) for t in self.coefficients))

    @classmethod
    def from_dict(cls, block: dict) -> "Potential":
        kind = block.get("kind", "polynomial-complex-well")
        m = block.get("m", 1 if kind == "scalar-bistable" else 2)
        N = block.get("N", 2 if m == 1 else 3)
        return cls(
            kind=kind,
            N=int(N),
            m=int(m),
            well_radius=float(block.get("well_radius", 1.0)),
            coefficients=tuple(block.get("coefficients", ())),
            h=int(block.get("h", 1)),
        )

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "N": self.N, "h": self.h, "m": self.m,
               "well_radius": self.well_radius}
        if self.coefficients:
            out["coefficients"] = [list(t) for t in self.coefficients]
        return out

    @property
    def omega(self) -> np.ndarray:
        return rotation_generator(self.N, self.h, self.m)[0]

    @property
    def a(self) -> np.ndarray:
        if self.m == 1:
            return np.array([self.well_radius])
        return np.array([self.well_radius, 0.0])

    @property
    def wells(self) -> np.ndarray:
        """The N wells a, omega a, ..., omega^(N-1) a as an (N, m) array."""
        out = [self.a]
        for _ in range(self.N - 1):
            out.append(self.omega @ out[-1])
        return np.array(out)


def _check_finite(u):
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise DomainError("potential evaluated at a non-finite point")
    return u


def _as_complex(u):
    return u[..., 0] + 1j * u[..., 1]


def eval_w(p: Potential, u) -> np.ndarray:
    u = _check_finite(u)
    if p.kind == "scalar-bistable":
        x = u[..., 0] / p.well_radius
        return 0.25 * (1.0 - x * x) ** 2
    if p.kind == "polynomial-complex-well":
        z = _as_complex(u)
        f = z ** p.N - p.well_radius ** p.N
        return f.real ** 2 + f.imag ** 2
    return _poly_eval(p, u)


def grad_w(p: Potential, u) -> np.ndarray:
    u = _check_finite(u)
    if p.kind == "scalar-bistable":
        rho = p.well_radius
        x = u[..., 0] / rho
        return ((x ** 3 - x) / rho)[..., None]
    if p.kind == "polynomial-complex-well":
        # W = |f|^2 with f holomorphic: grad W = 2 f conj(f')
        z = _as_complex(u)
        f = z ** p.N - p.well_radius ** p.N
        g = 2.0 * f * np.conj(p.N * z ** (p.N - 1))
        return np.stack([g.real, g.imag], axis=-1)
    return _poly_grad(p, u)


def w_change(p: Potential, u, un) -> np.ndarray:
    """W(un) - W(u) in factored form, so the error scales with |un - u|."""
    u, un = _check_finite(u), _check_finite(un)
    if p.kind == "scalar-bistable":
        x, xn = u[..., 0] / p.well_radius, un[..., 0] / p.well_radius
        return 0.25 * (x - xn) * (x + xn) * (2.0 - x * x - xn * xn)
    if p.kind == "polynomial-complex-well":
        z, zn = _as_complex(u), _as_complex(un)
        A = p.well_radius ** p.N
        s = sum(zn ** k * z ** (p.N - 1 - k) for k in range(p.N))
        df = (zn - z) * s
        return (df * np.conj(zn ** p.N + z ** p.N - 2 * A)).real
    return _poly_eval(p, un) - _poly_eval(p, u)


def _poly_eval(p: Potential, u):
    out = np.zeros(u.shape[:-1])
    for term in p.coefficients:
        if p.m == 1:
            i, c = term
            out = out + c * u[..., 0] ** i
        else:
            i, j, c = term
            out = out + c * u[..., 0] ** i * u[..., 1] ** j
    return out


def _poly_grad(p: Potential, u):
    g = np.zeros(u.shape)
    for term in p.coefficients:
        if p.m == 1:
            i, c = term
            if i:
                g[..., 0] += c * i * u[..., 0] ** (i - 1)
        else:
            i, j, c = term
            x, y = u[..., 0], u[..., 1]
            if i:
                g[..., 0] += c * i * x ** (i - 1) * y ** j
            if j:
                g[..., 1] += c * j * x ** i * y ** (j - 1)
    return g


def rotation_generator(N: int, h: int = 1, m: int = 2):
    """Return ``(omega, omega_domain)``.

    ``omega`` is the target action (an ``m x m`` matrix, ``[[-1]]`` for
    m = 1) and ``omega_domain`` the 2x2 rotation by ``2 pi / (h N)``.
    """
    if N < 2:
        raise ParameterError("symmetry order N must be >= 2")
    if h < 1:
        raise ParameterError("domain fold h must be >= 1")
    if m == 1:
        if N != 2:
            raise ParameterError("scalar targets only support N = 2")
        target = np.array([[-1.0]])
    else:
        target = _rot(2.0 * np.pi / N)
    return target, _rot(2.0 * np.pi / (h * N))


def _rot(angle):
    c, s = np.cos(angle), np.sin(angle)
    # snap to exact zeros/ones so group relations hold to machine precision
    c = 0.0 if abs(c) < 1e-15 else c
    s = 0.0 if abs(s) < 1e-15 else s
    return np.array([[c, -s], [s, c]])


def hessian_fd(p: Potential, u, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference Hessian built from ``grad_w``."""
    u = np.asarray(u, dtype=float)
    H = np.empty((p.m, p.m))
    for k in range(p.m):
        e = np.zeros(p.m)
        e[k] = step
        H[:, k] = (grad_w(p, u + e) - grad_w(p, u - e)) / (2 * step)
    return 0.5 * (H + H.T)


@dataclass
class PotentialConstants:
    c_W: float
    C_W: float
    delta_W: float
    M: float
    delta0: float
    delta_star: float
    hessian_eigs: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {"c_W": self.c_W, "C_W": self.C_W, "delta_W": self.delta_W,
                "M": self.M, "delta0": self.delta0, "delta_star": self.delta_star}


def _sphere(p: Potential, center, radius, n):
    if p.m == 1:
        return center + np.array([[-radius], [radius]])
    t = 2 * np.pi * (np.arange(n) + 0.5) / n
    return center + radius * np.stack([np.cos(t), np.sin(t)], axis=-1)


def _coercivity_radius(p: Potential, n_samples: int) -> float:
    M = float(np.max(np.linalg.norm(p.wells, axis=1)))
    for _ in range(200):
        ok = True
        for rad in np.linspace(M, 4 * M, 16):
            pts = _sphere(p, np.zeros(p.m), rad, n_samples)
            if np.any(np.sum(grad_w(p, pts) * pts, axis=-1) < 0):
                ok = False
                break
        if ok:
            return M
        M *= 1.1
    raise HypothesisError("no coercivity radius found")


def _dist_to_wells(p: Potential, z):
    d = np.linalg.norm(z[..., None, :] - p.wells, axis=-1)
    return d.min(axis=-1)


def estimate_constants(p: Potential, delta_probe_grid=None, sphere_samples: int = 256,
                       margin: float = 0.05, delta_star: float | None = None) -> PotentialConstants:
    """Certify c_W, C_W, delta_W, M and delta0 by Hessian analysis plus sampling."""
    a = p.a
    if abs(float(eval_w(p, a))) > 1e-12:
        raise HypothesisError("W(a) != 0: the reference point is not a well")
    eigs = np.linalg.eigvalsh(hessian_fd(p, a))
    if eigs.min() <= 0:
        raise HypothesisError(f"Hessian at a not positive definite: {eigs}")
    c_W = (1 - margin) * np.sqrt(eigs.min())
    C_W = (1 + margin) * np.sqrt(eigs.max())
    M = _coercivity_radius(p, sphere_samples)

    sep = np.min([np.linalg.norm(w - a) for w in p.wells[1:]])
    if delta_probe_grid is None:
        delta_probe_grid = sep * np.array([0.5, 0.4, 0.3, 0.25, 0.2, 0.15, 0.1, 0.05, 0.025, 0.01])
    grid = np.sort(np.asarray(delta_probe_grid, dtype=float))[::-1]

    # bulk samples for the "outside the wells" chain
    rng = np.random.default_rng(0)
    n_bulk = 4000
    if p.m == 1:
        bulk = rng.uniform(-M, M, size=(n_bulk, 1))
    else:
        rad = M * np.sqrt(rng.uniform(0, 1, n_bulk))
        ang = rng.uniform(0, 2 * np.pi, n_bulk)
        bulk = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)
    bulk_w = eval_w(p, bulk)
    bulk_d = _dist_to_wells(p, bulk)

    def holds(delta):
        for rad in np.linspace(delta / 32, delta, 32):
            z = _sphere(p, a, rad, sphere_samples)
            w = eval_w(p, z)
            lo, hi = 0.5 * c_W ** 2 * rad ** 2, 0.5 * C_W ** 2 * rad ** 2
            if np.any(w < lo * (1 - 1e-10)) or np.any(w > hi * (1 + 1e-10)):
                return False
            inner = np.sum(grad_w(p, z) * (z - a), axis=-1)
            if np.any(inner < c_W ** 2 * rad ** 2 * (1 - 1e-10)):
                return False
        need = 0.5 * c_W ** 2 * np.minimum(bulk_d, delta) ** 2
        return bool(np.all(bulk_w >= need * (1 - 1e-10)))

    delta_W = None
    for d in grid:
        if holds(d):
            delta_W = float(d)
            break
    if delta_W is None:
        raise HypothesisError("no admissible delta_W on the probe grid")

    if delta_star is None:
        delta_star = delta_W / 2
    delta0 = _monotonicity_radius(p, delta_W, delta_star, M, sphere_samples)
    return PotentialConstants(float(c_W), float(C_W), delta_W, float(M), delta0,
                              float(delta_star), tuple(float(e) for e in eigs))


def _monotonicity_radius(p, delta_W, delta_star, M, n_rays):
    a = p.a
    if p.m == 1:
        dirs = np.array([[-1.0], [1.0]])
    else:
        t = 2 * np.pi * np.arange(n_rays) / n_rays
        dirs = np.stack([np.cos(t), np.sin(t)], axis=-1)
    ts = np.linspace(0, 2 * M + np.linalg.norm(a), 4000)[1:]
    best = delta_W
    others = p.wells[1:]
    for n in dirs:
        pts = a + ts[:, None] * n
        allowed = np.linalg.norm(pts, axis=-1) <= M
        if len(others):
            allowed &= np.min(np.linalg.norm(pts[:, None, :] - others, axis=-1), axis=1) >= delta_star
        f = eval_w(p, pts)
        g = np.where(allowed, f, np.inf)
        # suffix minimum over strictly larger t
        suffix = np.minimum.accumulate(g[::-1])[::-1]
        suffix = np.append(suffix[1:], np.inf)
        bad = np.nonzero(f >= suffix)[0]
        if len(bad):
            best = min(best, ts[bad[0]])
    return float(best)


def verify_hypotheses(p: Potential, tol: float = 1e-12, n_samples: int = 1000) -> dict:
    """Report symmetry and well checks without raising."""
    rng = np.random.default_rng(12345)
    report = {"kind": p.kind, "N": p.N, "m": p.m}
    u = rng.uniform(-1, 1, size=(n_samples, p.m))
    u *= 10 * rng.uniform(0, 1, size=(n_samples, 1)) / np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
    w = eval_w(p, u)
    wr = eval_w(p, u @ p.omega.T)
    asym = float(np.max(np.abs(wr - w) / (1 + np.abs(w))))
    report["symmetry_residual"] = asym
    report["symmetry_pass"] = asym <= tol
    wells = p.wells
    report["wells"] = wells.tolist()
    well_vals = eval_w(p, wells)
    distinct = len(wells) == len({tuple(np.round(x, 12)) for x in wells})
    report["well_count"] = len(wells) if distinct else 0
    report["wells_are_zeros"] = bool(np.all(np.abs(well_vals) <= tol))
    nonneg = bool(np.all(w >= -tol))
    try:
        eigs = np.linalg.eigvalsh(hessian_fd(p, p.a))
        report["hessian_eigs"] = eigs.tolist()
        pd = bool(eigs.min() > 0)
    except DomainError:
        report["hessian_eigs"] = []
        pd = False
    try:
        report["coercivity_radius"] = _coercivity_radius(p, 128)
        coercive = True
    except HypothesisError:
        report["coercivity_radius"] = None
        coercive = False
    report["wells_pass"] = bool(distinct and report["wells_are_zeros"] and nonneg and pd and coercive)
    report["pass"] = bool(report["symmetry_pass"] and report["wells_pass"])
    return report
