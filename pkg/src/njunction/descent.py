"""Monotone Barzilai-Borwein descent in a fixed preconditioned metric.

The preconditioner is an SPD operator ``P`` (a discrete Sobolev metric); the
search direction is ``-P^{-1} g`` and the BB1 step is measured in the same
metric.  Every accepted step satisfies an Armijo condition, so the recorded
energy sequence is non-increasing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DivergenceError


@dataclass
class SolveReport:
    energy: float
    grad_norm: float
    iterations: int
    wall_time: float
    monotone: bool
    converged: bool
    energies: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"energy": self.energy, "grad_norm": self.grad_norm,
                "iterations": self.iterations, "wall_time": self.wall_time,
                "monotone": self.monotone, "converged": self.converged}


def bb_descent(energy_grad, x0, precond, residual, tol, max_iter=20000,
               step0=1.0, armijo=1e-4, fail_factor=10.0, raise_on_fail=True,
               energy_change=None, flat_limit=50):
    """Minimize ``energy_grad(x) -> (E, g)`` starting from ``x0``.

    ``precond(g)`` returns ``P^{-1} g`` and ``residual(g)`` the stopping
    measure compared against ``tol``.  ``energy_change(x, xn)``, if given,
    returns E(xn) - E(x) computed without cancellation; the line search then
    sees decreases far below the round-off of E itself.  After ``flat_limit``
    consecutive steps with no measurable decrease the loop stops.  Raises
    ConvergenceError when it ends with ``residual > fail_factor * tol``.
    """
    t0 = time.perf_counter()
    x = np.array(x0, dtype=float, copy=True)
    E, g = energy_grad(x)
    if not np.isfinite(E):
        raise DivergenceError("non-finite energy at the initial state", iteration=0)
    energies = [E]
    d = precond(g)
    gd = float(np.vdot(g, d))
    step = step0
    res = residual(g)
    it = 0
    stalled = 0
    flat = 0
    while res > tol and it < max_iter:
        it += 1
        accepted = False
        for _ in range(60):
            xn = x - step * d
            En, gn = energy_grad(xn)
            if not np.isfinite(En):
                step *= 0.25
                continue
            dE = En - E if energy_change is None else energy_change(x, xn)
            if dE <= -armijo * step * gd:
                accepted = True
                break
            step *= 0.5
        if accepted:
            flat = 0
        else:
            # energy at round-off level: cannot make monotone progress
            if np.isfinite(En) and dE <= 0:
                flat += 1
                if flat > flat_limit:
                    break
            else:
                stalled += 1
                if stalled > 3:
                    break
                step = step0
                continue
        if not np.isfinite(En):
            raise DivergenceError(f"non-finite energy at iteration {it}", iteration=it)
        s = xn - x
        y = gn - g
        dn = precond(gn)
        sy = float(np.vdot(s, y))
        sPs = step * step * gd
        E = En if energy_change is None else min(E + dE, E)
        x, g, d = xn, gn, dn
        gd = float(np.vdot(g, d))
        energies.append(E)
        res = residual(g)
        step = sPs / sy if sy > 0 else 2.0 * step
        step = float(np.clip(step, 1e-8, 1e4))
    report = SolveReport(
        energy=float(E), grad_norm=float(res), iterations=it,
        wall_time=time.perf_counter() - t0,
        monotone=bool(np.all(np.diff(energies) <= 0.0)),
        converged=bool(res <= tol), energies=energies,
    )
    assert report.monotone, "energy increased during descent"
    if raise_on_fail and res > fail_factor * tol:
        raise ConvergenceError(
            f"descent stopped after {it} iterations with residual {res:.3e} > {fail_factor}*tol",
            residual=float(res), iteration=it)
    return x, report
