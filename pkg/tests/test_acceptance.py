"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""
import time

import numpy as np
import pytest

from conftest import (SQRT2_THIRDS, SWEEP_GRID, SWEEP_R, saddle_run, scalar, scalar_profile,
                      sweep_run, tri, tri_params, tri_profile)
from njunction import connect1d
from njunction.analysis import (ThetaMap, back_solve_C2, brute_force_length, decay_fit,
                                lipschitz_violations, minimal_curve, saddle_report, sigma_bound)
from njunction.connect1d import _interior_energy_grad
from njunction.disk2d import (DiskEnergy, PolarGrid, build_test_function, energy_gradient,
                              radial_kinetic, total_energy)
from njunction.fiber import _arc_energy_grad, arc_energy, fiber_gap
from njunction.potential import estimate_constants
from test_analysis import four_cell_arcs, planted_field


@pytest.fixture
def verdict(capsys):
    def emit(label, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{label}] {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def timed_sweep():
    t0 = time.perf_counter()
    runs = {R: sweep_run(R) for R in SWEEP_R}
    return runs, time.perf_counter() - t0


def _nsigma(R):
    return 3 * tri_profile().sigma * R


def test_c01_heteroclinic_golden_value(verdict):
    p = scalar()
    t0 = time.perf_counter()
    prof = connect1d.solve_heteroclinic(p, L=20, n=4000, constants=estimate_constants(p))
    dt = time.perf_counter() - t0
    err = abs(prof.sigma - SQRT2_THIRDS)
    ok = err <= 1e-3 and prof.equipartition <= 5e-4 and dt < 5
    verdict("01 heteroclinic", ok, f"sigma={prof.sigma:.6f} |err|={err:.1e} "
            f"equipartition={prof.equipartition:.1e} time={dt:.2f}s")


def test_c02_fiber_gap_rate(verdict):
    p, prof = scalar(), scalar_profile()
    radii = np.arange(10.0, 201.0, 10.0)
    t0 = time.perf_counter()
    tab = fiber_gap(p, radii, profile=prof, tol=1e-10)
    dt = time.perf_counter() - t0
    positive = bool(np.all(tab.gap > 0))
    lg = np.log(np.where(tab.gap > 0, tab.gap, np.nan))
    slope, icpt = np.polyfit(radii, lg, 1) if positive else (np.nan, np.nan)
    resid = np.max(np.abs(lg - (slope * radii + icpt))) if positive else np.inf
    span = abs(lg[0] - lg[-1]) if positive else 0.0
    loglinear = positive and span > 0 and resid < 0.1 * span
    ratio = tab.fitted_rate / tab.theory_rate
    ok = positive and loglinear and 0.5 <= ratio <= 2.0 and dt < 120
    verdict("02 fiber gap", ok, f"gap range [{tab.gap.min():.3e}, {tab.gap.max():.3e}] "
            f"fitted rate={tab.fitted_rate:.3e} bound rate={tab.theory_rate:.3f} "
            f"ratio={ratio:.2e} time={dt:.1f}s")


def test_c03_energy_sandwich(verdict, timed_sweep):
    runs, dt = timed_sweep
    C1 = np.array([total_energy(runs[R]["test"]) - _nsigma(R) for R in SWEEP_R])
    below = all(runs[R]["report"].energy <= total_energy(runs[R]["test"]) for R in SWEEP_R)
    stable = np.max(np.abs(C1 - C1.mean())) <= 0.2 * abs(C1.mean())
    J = [runs[R]["report"].energy for R in SWEEP_R]
    slope = np.polyfit(SWEEP_R, J, 1)[0] / (3 * tri_profile().sigma)
    ok = below and stable and abs(slope - 1) <= 0.05 and dt < 900
    verdict("03 sandwich", ok, f"C1={np.round(C1, 4).tolist()} J={np.round(J, 4).tolist()} "
            f"slope/(N sigma)={slope:.4f} time={dt:.0f}s")


def test_c04_radial_kinetic(verdict, timed_sweep):
    runs, _ = timed_sweep
    k40, k80 = radial_kinetic(runs[40]["field"]), radial_kinetic(runs[80]["field"])
    verdict("04 radial kinetic", k80 <= 2 * k40, f"R=40: {k40:.4f} R=80: {k80:.4f}")


def test_c05_bad_set_bounded(verdict, timed_sweep):
    runs, _ = timed_sweep
    par = tri_params()
    meas = np.array([runs[R]["analysis"].report["sigma_measure"] for R in SWEEP_R])
    C1 = total_energy(runs[20]["test"]) - _nsigma(20)
    C0 = _nsigma(20) - runs[20]["report"].energy
    bound = sigma_bound(back_solve_C2(C0, C1, par), par)
    ok = meas.min() > 0 and meas.max() / meas.min() <= 3 and np.all(meas <= bound)
    verdict("05 bad set", ok, f"|Sigma|={np.round(meas, 4).tolist()} "
            f"max/min={meas.max() / max(meas.min(), 1e-300):.3f} bound={bound:.3e}")


def test_c06_layer_angle_regularity(verdict, timed_sweep):
    runs, _ = timed_sweep
    viol = [runs[R]["analysis"].report["lipschitz"]["violations"] for R in SWEEP_R]
    pairs = [runs[R]["analysis"].report["lipschitz"]["pairs_checked"] for R in SWEEP_R]
    par = tri_params()
    r = np.linspace(20, 40, 81)
    th = np.where(r < 30, 0.0, np.pi / 6)
    witness = lipschitz_violations(ThetaMap(r, th, np.zeros(len(r)), 0.1, 2 * np.pi / 3, 1e-3), par, 0.01)
    ok = all(v == 0 for v in viol) and min(pairs) > 0 and len(witness.violations) > 0
    verdict("06 layer angle", ok, f"violations={viol} pairs={pairs} "
            f"witness flagged={len(witness.violations)}")


def test_c07_minimal_curve(verdict):
    arcs = four_cell_arcs()
    mc = minimal_curve(arcs=arcs)
    bf = brute_force_length(arcs, K=1025)
    rel = abs(mc.length - bf) / bf
    line = [(4.0, 0.0, 0.0), (9.0, -0.2, 0.2), (16.0, -0.1, 0.1), (25.0, -0.05, 0.05), (36.0, 0.0, 0.0)]
    straight = abs(minimal_curve(arcs=line).length - 32.0)
    verdict("07 minimal curve", rel <= 1e-6 and straight <= 1e-9,
            f"rel vs brute force={rel:.1e} collinear error={straight:.1e}")


def test_c08_length_excess(verdict, timed_sweep):
    runs, _ = timed_sweep
    e40 = runs[40]["analysis"].report["length_excess"]
    e80 = runs[80]["analysis"].report["length_excess"]
    cells = 2 * 80 / SWEEP_GRID[0]
    verdict("08 length excess", abs(e80) <= abs(e40) + cells,
            f"excess(40)={e40:.3f} excess(80)={e80:.3f} allowance={cells:.3f}")


def test_c09_decay(verdict, timed_sweep):
    runs, _ = timed_sweep
    planted = {rate: decay_fit(planted_field(rate), 0.5, 3.0).k for rate in (0.4, 0.7, 1.1)}
    rel = max(abs(k - rate) / rate for rate, k in planted.items())
    dec = {R: runs[R]["analysis"].report["decay"] for R in (40, 80)}
    ok = rel <= 0.03 and all(d is not None and d["k"] > 0 and d["rms"] < 0.5 for d in dec.values())
    verdict("09 decay", ok, f"planted worst rel={rel:.1e} "
            + " ".join(f"R={R}: k={d['k']:.3f} rms={d['rms']:.3f}" for R, d in dec.items()))


def test_c10_pointwise(verdict, timed_sweep):
    runs, _ = timed_sweep
    pw = [runs[R]["analysis"].report["pointwise"] for R in SWEEP_R]
    ok = all(p["sampled"] == 200 and p["violations"] == 0 for p in pw)
    verdict("10 pointwise", ok, " ".join(f"R={R}: {p['violations']}/{p['tested']} tested"
                                         for R, p in zip(SWEEP_R, pw)))


def test_c11_saddle(verdict):
    f, rep = saddle_run(40)
    s = saddle_report(f)
    ok = rep.converged and s.seam_max <= 5e-2 and s.alternating and len(s.signs) == 4
    verdict("11 saddle", ok, f"seam max={s.seam_max:.1e} signs={list(s.signs)}")


def _fd_worst(energy, grad, x, rng, h=1e-6):
    worst = 0.0
    for _ in range(20):
        d = rng.standard_normal(x.shape)
        fd = (energy(x + h * d) - energy(x - h * d)) / (2 * h)
        an = float(np.sum(grad * d))
        worst = max(worst, abs(fd - an) / abs(an))
    return worst


def test_c12_gradient_consistency(verdict):
    rng = np.random.default_rng(12)
    sp = scalar_profile()
    p1, h = sp.potential, sp.h * 20
    # off the minimizer, where the gradient is not round-off sized
    u = sp.u[::20] + 0.1 * rng.standard_normal(sp.u[::20].shape)
    _, g1 = _interior_energy_grad(p1, u, h)

    def chain(x):
        return connect1d.chain_energy(p1, np.vstack([u[:1], x, u[-1:]]), h)

    chain_err = _fd_worst(chain, g1, u[1:-1], rng)
    p3 = tri()
    v = rng.standard_normal((120, 2)) * 0.3
    _, g2 = _arc_energy_grad(p3, v, 0.1)
    arc_err = _fd_worst(lambda x: arc_energy(p3, x, 0.1), g2, v, rng)
    g = PolarGrid(10.0, 32, 24, 3)
    f = build_test_function(p3, tri_profile(), g)
    e = DiskEnergy(g, p3)
    disk_err = _fd_worst(e.sector, energy_gradient(f), f.u, rng)
    worst = max(chain_err, arc_err, disk_err)
    verdict("12 gradients", worst <= 1e-5,
            f"chain={chain_err:.1e} fiber={arc_err:.1e} disk={disk_err:.1e}")
