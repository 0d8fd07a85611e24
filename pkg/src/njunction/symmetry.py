"""Helpers for the twisted (equivariant) closure of periodic grids.

For m = 2 a target vector (x, y) is handled as the complex number x + iy and
the generator omega as multiplication by exp(2 pi i / N); for m = 1 omega is
the real number -1.  Quadratic forms of twisted differences then become
Hermitian sparse matrices that can be factorized once and reused as a
preconditioner.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .potential import Potential


def omega_scalar(p: Potential):
    return -1.0 if p.m == 1 else np.exp(2j * np.pi / p.N)


def to_scalar(p: Potential, u):
    return u[..., 0] if p.m == 1 else u[..., 0] + 1j * u[..., 1]


def from_scalar(p: Potential, z):
    if p.m == 1:
        return np.real(z)[..., None]
    return np.stack([z.real, z.imag], axis=-1)


def twisted_cycle(n: int, twist) -> sp.csr_matrix:
    """Matrix of sum_k |z_{k+1} - z_k|^2 with z_n = twist * z_0."""
    dtype = complex if np.iscomplexobj(twist) else float
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    A = sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="lil", dtype=dtype)
    if n == 1:
        A[0, 0] = 2.0 - 2.0 * np.real(twist)
        return A.tocsr()
    A[n - 1, 0] += -twist
    A[0, n - 1] += -np.conj(twist)
    return A.tocsr()


class SparsePreconditioner:
    """Apply P^{-1} to gradients stored as real (..., m) arrays."""

    def __init__(self, p: Potential, P: sp.spmatrix, shape):
        self.p = p
        self.shape = shape
        self.lu = splu(sp.csc_matrix(P))

    def __call__(self, g_flat):
        g = g_flat.reshape(self.shape)
        z = to_scalar(self.p, g).ravel()
        if self.p.m == 2:
            z = z.astype(complex)
        x = self.lu.solve(z)
        return from_scalar(self.p, x.reshape(self.shape[:-1])).ravel()
