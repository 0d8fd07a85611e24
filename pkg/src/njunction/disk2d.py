"""Equivariant maps on a disk, stored on one polar fundamental sector.

Radial nodes sit at cell midpoints r_i = (i + 1/2) dr, so the origin is never
a node; the single center value is pinned to 0, the only point fixed by the
target rotation.  Angular nodes are theta_k = k dtheta over [0, 2 pi/(hN)) and
the seam closes with u(r, theta + 2 pi/(hN)) = omega u(r, theta).

The kinetic part of the energy is the Hermitian form (1/2) z^H K z in the
scalar representation of ``symmetry``; the same K (plus a mass shift) is the
descent preconditioner, so energy, gradient and metric share one assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .connect1d import HeteroclinicProfile
from .descent import SolveReport, bb_descent
from .errors import DomainError, FormatError, ParameterError
from .fiber import FiberProfile, make_fiber
from .potential import Potential, eval_w, grad_w, w_change
from .symmetry import SparsePreconditioner, from_scalar, omega_scalar, to_scalar, twisted_cycle

MAGIC = b"NJFIELD"


@dataclass(frozen=True)
class PolarGrid:
    R: float
    n_r: int
    n_theta: int
    N: int
    h: int = 1

    def __post_init__(self):
        if not (self.R > 0 and self.n_r > 0 and self.n_theta > 0):
            raise ParameterError("grid needs R > 0, n_r > 0, n_theta > 0")
        if self.n_r * self.n_theta < 2:
            raise ParameterError("grid too small")

    @property
    def folds(self) -> int:
        return self.h * self.N

    @property
    def sector(self) -> float:
        return 2 * np.pi / self.folds

    @property
    def dr(self) -> float:
        return self.R / self.n_r

    @property
    def dtheta(self) -> float:
        return self.sector / self.n_theta

    @property
    def r_min(self) -> float:
        return 0.5 * self.dr

    @property
    def r(self) -> np.ndarray:
        return (np.arange(self.n_r) + 0.5) * self.dr

    @property
    def theta(self) -> np.ndarray:
        return np.arange(self.n_theta) * self.dtheta

    @property
    def mass(self) -> np.ndarray:
        """Quadrature weight r_i dr dtheta of every node, shape (n_r, n_theta)."""
        return np.repeat((self.r * self.dr * self.dtheta)[:, None], self.n_theta, axis=1)

    def coords(self):
        rr, tt = np.meshgrid(self.r, self.theta, indexing="ij")
        return rr, tt


@dataclass
class EquivariantField:
    grid: PolarGrid
    u: np.ndarray  # (n_r, n_theta, m)
    potential: Potential
    center_value: np.ndarray = field(default=None)

    def __post_init__(self):
        m = self.potential.m
        self.u = np.asarray(self.u, dtype=float).reshape(self.grid.n_r, self.grid.n_theta, m)
        if self.center_value is None:
            self.center_value = np.zeros(m)
        if np.any(self.center_value != 0):
            raise DomainError("center value must be 0 for an equivariant field")
        p, g = self.potential, self.grid
        if (p.N, p.h) != (g.N, g.h):
            raise ParameterError("grid sector does not match the potential's (N, h)")

    def full_disk(self):
        """Values on all hN sectors: (r, theta, u) with theta over [0, 2 pi)."""
        om = self.potential.omega
        blocks, g = [], np.eye(self.potential.m)
        for _ in range(self.grid.folds):
            blocks.append(self.u @ g.T)
            g = om @ g
        u = np.concatenate(blocks, axis=1)
        theta = np.arange(u.shape[1]) * self.grid.dtheta
        return self.grid.r, theta, u


# ---------------------------------------------------------------- operators


def stiffness(grid: PolarGrid, p: Potential) -> sp.csr_matrix:
    """K with kinetic sector energy (1/2) Re z^H K z."""
    nr, nt = grid.n_r, grid.n_theta
    dr, dth = grid.dr, grid.dtheta
    r = grid.r
    At = twisted_cycle(nt, omega_scalar(p))
    dtype = At.dtype
    ang = sp.kron(sp.diags(dr / (r * dth)), At)
    w_rad = (np.arange(1, nr) * dr) * dth / dr
    if nr > 1:
        main = np.zeros(nr)
        main[:-1] += w_rad
        main[1:] += w_rad
        Ar = sp.diags([-w_rad, main, -w_rad], [-1, 0, 1], shape=(nr, nr))
    else:
        Ar = sp.csr_matrix((1, 1))
    center = np.zeros(nr)
    center[0] = 0.5 * dth  # from (1/4)|u_0|^2 dtheta between origin and r_0
    rad = sp.kron(Ar + sp.diags(center), sp.identity(nt))
    return (ang + rad).astype(dtype).tocsr()


class DiskEnergy:
    """Sector energy and gradient on a fixed grid."""

    def __init__(self, grid: PolarGrid, p: Potential):
        self.grid, self.p = grid, p
        self.K = stiffness(grid, p)
        self.mass = grid.mass
        self.shape = (grid.n_r, grid.n_theta, p.m)

    def sector(self, u):
        z = to_scalar(self.p, u).ravel()
        kin = 0.5 * float(np.real(np.vdot(z, self.K @ z)))
        return kin + float(np.sum(eval_w(self.p, u) * self.mass))

    def sector_grad(self, u):
        z = to_scalar(self.p, u).ravel()
        Kz = self.K @ z
        kin = 0.5 * float(np.real(np.vdot(z, Kz)))
        E = kin + float(np.sum(eval_w(self.p, u) * self.mass))
        g = from_scalar(self.p, Kz.reshape(self.shape[:2])) + grad_w(self.p, u) * self.mass[..., None]
        return E, g

    def change(self, u, un):
        """E(un) - E(u) without forming the two totals."""
        z = to_scalar(self.p, u).ravel()
        dz = to_scalar(self.p, un).ravel() - z
        kin = float(np.real(np.vdot(dz, self.K @ z)) + 0.5 * np.real(np.vdot(dz, self.K @ dz)))
        dw = w_change(self.p, u, un) * self.mass
        return kin + float(np.sum(dw))

    def el_residual(self, g):
        """Mass-normalized Euler-Lagrange residual per node."""
        return np.linalg.norm(g.reshape(self.shape), axis=-1) / self.mass


def total_energy(f: EquivariantField) -> float:
    return f.grid.folds * DiskEnergy(f.grid, f.potential).sector(f.u)


def energy_gradient(f: EquivariantField) -> np.ndarray:
    return DiskEnergy(f.grid, f.potential).sector_grad(f.u)[1]


def radial_kinetic(f: EquivariantField) -> float:
    """Integral of |du/dr|^2 over the disk (edge differences, center edge included)."""
    g = f.grid
    du = np.diff(f.u, axis=0) / g.dr
    r_edge = np.arange(1, g.n_r) * g.dr
    s = np.sum(np.sum(du * du, axis=-1) * r_edge[:, None]) * g.dr * g.dtheta
    # origin to r_0: slope u_0 / (dr/2) over r in [0, dr/2]
    s += np.sum(f.u[0] ** 2) * 4 / g.dr ** 2 * (g.dr ** 2 / 8) * g.dtheta
    return float(g.folds * s)


def pde_residual(f: EquivariantField) -> np.ndarray:
    """Per-node residual of -Delta u + W_u(u) = 0, in the discrete polar sense."""
    e = DiskEnergy(f.grid, f.potential)
    return e.el_residual(e.sector_grad(f.u)[1])


# ---------------------------------------------------------------- construction


def build_test_function(p: Potential, profile: HeteroclinicProfile, grid: PolarGrid,
                        core_radius: float | None = None) -> EquivariantField:
    """Three-zone upper-bound map with its layer on the theta = 0 ray.

    With phi the sector angle, the map is omega^{-1} u_bar(r sin theta) for
    theta in [0, phi/4], the linear theta-blend of the two boundary traces on
    [phi/4, 3 phi/4], and u_bar(r sin(theta - phi)) on [3 phi/4, phi) (the
    equivariant image of the layer zone below theta = 0).

    The three zones meet at the origin with different limits, which costs a
    logarithmically divergent angular energy.  The map is therefore scaled by
    min(r / core_radius, 1), an R-independent core of default size
    max(1/c_W, 2 dr); ``core_radius=0`` disables it.
    """
    if (p.N, p.h) != (grid.N, grid.h):
        raise ParameterError("grid sector does not match the potential's (N, h)")
    phi = grid.sector
    rr, tt = grid.coords()
    om_inv = p.omega.T
    out = np.empty((grid.n_r, grid.n_theta, p.m))

    def ubar(y):
        return profile(y.ravel()).reshape(y.shape + (p.m,))

    z1 = tt <= phi / 4
    z3 = tt >= 3 * phi / 4
    z2 = ~(z1 | z3)
    out[z1] = ubar(rr[z1] * np.sin(tt[z1])) @ om_inv.T
    out[z3] = ubar(rr[z3] * np.sin(tt[z3] - phi))
    s = np.sin(phi / 4)
    lo = ubar(rr[z2] * s) @ om_inv.T
    hi = ubar(-rr[z2] * s)
    t = tt[z2][:, None] / phi
    out[z2] = lo * (1.5 - 2 * t) + hi * (2 * t - 0.5)
    if core_radius is None:
        core_radius = max(1.0 / profile.constants.c_W, 2 * grid.dr)
    if core_radius > 0:
        out *= np.minimum(rr / core_radius, 1.0)[..., None]
    return EquivariantField(grid, out, p)


def zero_field(p: Potential, grid: PolarGrid) -> EquivariantField:
    return EquivariantField(grid, np.zeros((grid.n_r, grid.n_theta, p.m)), p)


# ---------------------------------------------------------------- minimization


def minimize_disk(p: Potential, grid: PolarGrid, init: EquivariantField, tol: float = 1e-6,
                  max_iter: int = 20000, C_W: float | None = None):
    """Descent to a local minimizer of the sector energy; returns (field, report).

    ``tol`` bounds the max-norm of the mass-normalized Euler-Lagrange residual.
    ``C_W`` sets the mass shift of the preconditioner (default: well curvature).
    """
    if init.grid != grid:
        raise ParameterError("init lives on a different grid")
    e = DiskEnergy(grid, p)
    if C_W is None:
        C_W = float(np.sqrt(np.max(np.linalg.eigvalsh(_hess_at_well(p)))))
    Pm = e.K + (C_W ** 2) * sp.diags(e.mass.ravel()).astype(e.K.dtype)
    pre = SparsePreconditioner(p, Pm, e.shape)
    shape = e.shape

    def eg(x):
        E, g = e.sector_grad(x.reshape(shape))
        return E, g.ravel()

    def resid(g):
        return float(np.max(e.el_residual(g)))

    def change(x, xn):
        return e.change(x.reshape(shape), xn.reshape(shape))

    x, rep = bb_descent(eg, init.u.ravel(), pre, resid, tol, max_iter=max_iter, energy_change=change)
    folds = grid.folds
    rep = replace(rep, energy=folds * e.sector(x.reshape(shape)),
                  energies=[folds * v for v in rep.energies])
    return EquivariantField(grid, x.reshape(shape), p), rep


def _hess_at_well(p: Potential):
    from .potential import hessian_fd

    return hessian_fd(p, p.a)


# ---------------------------------------------------------------- fibers and gauge


def restrict_fiber(f: EquivariantField, r: float) -> FiberProfile:
    """Circle of radius r, linearly interpolated in r at the grid angles."""
    g = f.grid
    if not (g.r_min - 1e-12 <= r <= g.R + 1e-12):
        raise DomainError(f"radius {r} outside [{g.r_min}, {g.R}]")
    rs = g.r
    if r >= rs[-1]:
        v = f.u[-1]
    else:
        i = int(np.searchsorted(rs, r, side="right")) - 1
        i = max(i, 0)
        w = (r - rs[i]) / g.dr
        v = (1 - w) * f.u[i] + w * f.u[i + 1]
    return make_fiber(f.potential, r, v)


def fiber_energies(f: EquivariantField) -> np.ndarray:
    """Tangential-only fiber energies J_r at every radial node."""
    return np.array([restrict_fiber(f, r).energy for r in f.grid.r])


def rotate_cells(f: EquivariantField, k: int) -> EquivariantField:
    """Rotate in the domain by k * dtheta: new u(theta) = old u(theta - k dtheta)."""
    nt = f.grid.n_theta
    om = f.potential.omega
    q, k = divmod(int(k), nt)
    u = f.u
    for _ in range(q % f.grid.folds):
        u = u @ om
    if k:
        # new[j] = old[j - k]; indices below 0 wrap with omega^{-1}
        head = u[:, nt - k:] @ om  # omega^{-1} = omega^T
        u = np.concatenate([head, u[:, :nt - k]], axis=1)
    return EquivariantField(f.grid, u, f.potential)


def gauge_rotate(f: EquivariantField, theta: float) -> EquivariantField:
    """Rotate so that the layer angle ``theta`` moves to 0 (to within one cell)."""
    k = int(np.round(theta / f.grid.dtheta))
    return rotate_cells(f, -k)


# ---------------------------------------------------------------- IO


def write_field(f: EquivariantField, path) -> None:
    g, p = f.grid, f.potential
    header = f"NJFIELD v1 {p.m} {g.N} {g.h} {g.n_r} {g.n_theta} {g.R!r}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.u, dtype="<f8").tobytes())


def read_header(data: bytes):
    nl = data.find(b"\n")
    if nl < 0 or not data.startswith(MAGIC):
        raise FormatError("missing NJFIELD header", offset=0)
    parts = data[:nl].split()
    if len(parts) != 8 or parts[1] != b"v1":
        raise FormatError("malformed header line", offset=0)
    try:
        m, N, h, n_r, n_t = (int(x) for x in parts[2:7])
        R = float(parts[7])
    except ValueError:
        raise FormatError("non-numeric header field", offset=0) from None
    return {"m": m, "N": N, "h": h, "n_r": n_r, "n_theta": n_t, "R": R}, nl + 1


def read_field(path, p: Potential) -> EquivariantField:
    with open(path, "rb") as fh:
        data = fh.read()
    hd, off = read_header(data)
    if (hd["m"], hd["N"], hd["h"]) != (p.m, p.N, p.h):
        raise FormatError(f"field (m,N,h)=({hd['m']},{hd['N']},{hd['h']}) does not match the potential",
                          offset=0)
    count = hd["n_r"] * hd["n_theta"] * hd["m"]
    if len(data) - off != 8 * count:
        raise FormatError(f"expected {count} float64 values, found {(len(data) - off) / 8:g}",
                          offset=off + min(len(data) - off, 8 * count))
    u = np.frombuffer(data, dtype="<f8", offset=off).reshape(hd["n_r"], hd["n_theta"], hd["m"])
    grid = PolarGrid(hd["R"], hd["n_r"], hd["n_theta"], hd["N"], hd["h"])
    return EquivariantField(grid, u.astype(float), p)
