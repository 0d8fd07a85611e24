import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SWEEP_GRID, tri, tri_params, tri_profile
from njunction import connect1d
from njunction.analysis import (DiskSampler, ThetaMap, brute_force_length, build_interface,
                                c_hat, decay_fit, decay_fit_values, default_ball_radius,
                                detect_sigma, fit_c_ring, layer_gauge, length_excess,
                                lipschitz_violations, min_r_ring, minimal_curve, pointwise_check,
                                sector_distance, theta_map, transverse_profile)
from njunction.disk2d import EquivariantField, PolarGrid, rotate_cells, zero_field
from njunction.errors import ConstructionError, InsufficientDataError, ParameterError


def four_cell_arcs():
    return [(4.0, 0.0, 0.0), (9.0, -0.05, 0.12), (16.0, 0.08, 0.2), (25.0, -0.1, 0.02), (36.0, 0.03, 0.03)]


# ---------------------------------------------------------------- bad set and layer angles


def test_zero_field_is_all_bad(tri_par):
    g = PolarGrid(30.0, 60, 24, 3)
    sig = detect_sigma(zero_field(tri(), g), tri_par)
    assert sig.flags.all()
    assert sig.measure == pytest.approx(g.dr * len(sig.radii))
    assert abs(sig.measure - (g.R - tri_par.r_delta)) <= g.dr


def test_test_map_mostly_structured(sweep, tri_par):
    f = sweep[80]["test"]
    sig = detect_sigma(f, tri_par)
    assert sig.measure / (80 - tri_par.r_delta) < 0.2
    again = detect_sigma(f, tri_par)
    assert np.array_equal(sig.flags, again.flags)
    assert sig.flags.tolist() == [c.tag != "VSTAR" for c in sig.classes]


def test_test_map_layer_angle_constant(sweep, tri_par):
    f = sweep[80]["test"]
    sig = detect_sigma(f, tri_par)
    tm = theta_map(f, sig, tri_par)
    sector = f.grid.sector
    d = np.minimum(tm.theta, sector - tm.theta)
    assert np.all(d <= tm.half_bracket + f.grid.dtheta)


def test_gauge_puts_outer_layer_on_zero_ray(sweep, tri_par):
    f = layer_gauge(sweep[40]["field"], tri_par)
    tm = theta_map(f, detect_sigma(f, tri_par), tri_par)
    d = min(tm.theta[-1], f.grid.sector - tm.theta[-1])
    assert d <= f.grid.dtheta


def test_domain_rotation_shifts_layer_angles(sweep, tri_par):
    f = sweep[40]["field"]
    k = 17
    tm0 = theta_map(f, detect_sigma(f, tri_par), tri_par)
    g = rotate_cells(f, k)
    sig1 = detect_sigma(g, tri_par)
    tm1 = theta_map(g, sig1, tri_par)
    assert np.array_equal(tm0.r, tm1.r)
    diff = np.mod(tm1.theta - tm0.theta - k * f.grid.dtheta + 0.5 * f.grid.sector, f.grid.sector) \
        - 0.5 * f.grid.sector
    assert np.max(np.abs(diff)) < 1e-9


def test_sweep_pipeline_rotation_invariant(sweep, tri_par):
    f = sweep[40]["field"]
    kbar = connect1d.tail_rate(tri_profile())
    from njunction.analysis import analyze

    a = sweep[40]["analysis"].report
    b = analyze(rotate_cells(f, 29), tri_par, kbar, total=sweep[40]["report"].energy,
                constants=tri_profile().constants).report
    assert a["sigma_measure"] == b["sigma_measure"]
    assert a["length_excess"] == pytest.approx(b["length_excess"], abs=1e-9)


# ---------------------------------------------------------------- Lipschitz check


def _tm(r, theta, nu=0.1, N=3):
    sector = 2 * np.pi / N
    return ThetaMap(np.asarray(r, float), np.asarray(theta, float), np.zeros(len(r)), nu, sector, 1e-3)


def test_constant_theta_has_no_violations(tri_par):
    r = np.linspace(10, 80, 200)
    rep = lipschitz_violations(_tm(r, np.full_like(r, 0.3)), tri_par, chat=0.0)
    assert rep.pairs_checked > 0 and rep.violations == [] and rep.cap_violations == []


def test_synthetic_jump_flagged(tri_par):
    r = np.linspace(20, 40, 81)
    th = np.where(r < 30, 0.0, np.pi / (2 * 3))
    rep = lipschitz_violations(_tm(r, th), tri_par, chat=0.01)
    assert len(rep.violations) > 0
    assert all(min(a, b) < 30 <= max(a, b) for a, b in rep.violations)


def test_lipschitz_beta_range(tri_par):
    with pytest.raises(ParameterError):
        lipschitz_violations(_tm([1.0, 2.0], [0, 0]), tri_par, chat=1.0, beta=1.0)


@settings(max_examples=40, deadline=None)
@given(shift=st.floats(0, 2), chat=st.floats(0, 5))
def test_lipschitz_shift_invariant(shift, chat):
    r = np.linspace(10, 60, 60)
    th = 0.2 * np.sin(r / 7)
    par = tri_params()
    a = lipschitz_violations(_tm(r, th), par, chat)
    b = lipschitz_violations(_tm(r, np.mod(th + shift, 2 * np.pi / 3)), par, chat)
    assert len(a.violations) == len(b.violations)


def test_sweep_lipschitz_clean(sweep):
    for R in (20, 40, 80):
        lip = sweep[R]["analysis"].report["lipschitz"]
        assert lip["pairs_checked"] > 0 and lip["violations"] == 0


# ---------------------------------------------------------------- interface and minimal curve


def _constant_interface(f, par, R):
    sig = detect_sigma(f, par)
    tm = theta_map(f, sig, par)
    ch = c_hat(f, par)
    # the test map only reaches the well balls beyond r ~ 13, so start the schedule at r_1 = 16
    return build_interface(tm, sig, par, ch, R, f.grid.dr, c1=3, theta_fn=lambda r: 0.0,
                           kbar=connect1d.tail_rate(tri_profile()))


def test_constant_theta_cells_are_symmetric(sweep, tri_par):
    ig = _constant_interface(sweep[80]["test"], tri_par, 80.0)
    assert np.allclose(ig.p_plus, -ig.p_minus, atol=1e-15)
    assert np.allclose(ig.q_plus[1:], -ig.q_minus[1:], atol=1e-15)
    assert np.all(np.diff(ig.r) > 0)
    # q_{j+1}^+ sits outside p_j^+
    assert np.all(ig.q_plus[1:] - ig.p_plus[:-1] > 0)
    mc = minimal_curve(ig)
    assert mc.length == pytest.approx(ig.r[-1] - ig.r[1], abs=1e-9)
    assert length_excess(mc, ig.r[-1]) == pytest.approx(-ig.r[1], abs=1e-9)


def test_cell_widths_shrink_relative_to_spacing(sweep, tri_par):
    ig = _constant_interface(sweep[80]["test"], tri_par, 80.0)
    width = ig.r[:-1] * (ig.p_plus[:-1] - ig.p_minus[:-1])
    ratio = width / np.diff(ig.r)
    assert ratio[-1] < ratio[0]


def test_sweep_interface_conditions(sweep):
    for R in (40, 80):
        ig = sweep[R]["analysis"].interface
        assert ig.n >= 3
        assert np.all(np.diff(ig.r) > 0)
        assert np.all(ig.q_plus[1:] - ig.p_plus[:-1] > 0)
        assert 0 < ig.c0 <= ig.C0


def test_schedule_infeasible_when_all_bad(tri_par):
    f = zero_field(tri(), PolarGrid(40.0, 80, 24, 3))
    sig = detect_sigma(f, tri_par)
    tm = theta_map(f, sig, tri_par)
    with pytest.raises(ConstructionError, match="j=1"):
        build_interface(tm, sig, tri_par, 1.0, 40.0, f.grid.dr)


def test_collinear_arcs_give_straight_line():
    arcs = [(4.0, 0.0, 0.0), (9.0, -0.2, 0.2), (16.0, -0.1, 0.1), (25.0, -0.05, 0.05), (36.0, 0.0, 0.0)]
    mc = minimal_curve(arcs=arcs)
    assert mc.length == pytest.approx(32.0, abs=1e-9)
    assert np.all(mc.on_endpoint[1:-1] == 0)
    assert mc.on_endpoint[0] == mc.on_endpoint[-1] == 2


def test_offset_arc_breaks_straight_line():
    arcs = [(4.0, 0.0, 0.0), (9.0, 0.1, 0.3), (16.0, -0.1, 0.1), (25.0, 0.0, 0.0)]
    mc = minimal_curve(arcs=arcs)
    assert mc.length > 21.0 + 1e-6
    assert mc.on_endpoint[1] == -1


def test_minimal_curve_matches_brute_force():
    arcs = four_cell_arcs()
    mc = minimal_curve(arcs=arcs)
    bf = brute_force_length(arcs, K=1025)
    assert abs(mc.length - bf) <= 1e-6 * bf
    assert mc.length <= bf + 1e-12


def test_minimal_curve_refinement_stable():
    arcs = four_cell_arcs()
    a = minimal_curve(arcs=arcs, K=65).length
    b = minimal_curve(arcs=arcs, K=130).length
    assert abs(a - b) <= 1e-6 * a
    with pytest.raises(ParameterError):
        minimal_curve(arcs=arcs, K=33)


@settings(max_examples=40, deadline=None)
@given(offs=st.lists(st.tuples(st.floats(-0.3, 0.3), st.floats(0.0, 0.3)), min_size=3, max_size=6))
def test_minimal_curve_properties(offs):
    arcs = [(4.0, 0.0, 0.0)]
    for k, (c, w) in enumerate(offs):
        arcs.append(((k + 3.0) ** 2, c - w / 2, c + w / 2))
    arcs.append(((len(offs) + 3.0) ** 2, 0.0, 0.0))
    mc = minimal_curve(arcs=arcs)
    assert mc.length >= arcs[-1][0] - arcs[0][0] - 1e-9
    for (r, lo, hi), a in zip(arcs, mc.angles):
        assert lo - 1e-12 <= a <= hi + 1e-12
    assert mc.length <= brute_force_length(arcs, K=129) + 1e-9


def test_sweep_length_excess_bounded(sweep):
    e40 = sweep[40]["analysis"].report["length_excess"]
    e80 = sweep[80]["analysis"].report["length_excess"]
    assert abs(e80) <= abs(e40) + 2 * 80 / SWEEP_GRID[0]


def test_angular_confinement_fit(sweep):
    for R in (40, 80):
        mc = sweep[R]["analysis"].curve
        C = fit_c_ring(mc)
        assert np.isfinite(C) and C >= 0
        dev = np.abs(mc.angles - mc.angles[-1])
        assert np.all(dev <= C / np.sqrt(mc.radii) + 1e-12)
        assert fit_c_ring(mc, sweep[R]["analysis"].interface) > C


# ---------------------------------------------------------------- transverse energies


def test_transverse_on_test_map_approaches_sigma(sweep, tri_par):
    f = sweep[80]["test"]
    ig = _constant_interface(f, tri_par, 80.0)
    mc = minimal_curve(ig)
    tp = transverse_profile(f, mc, ig, tri_par, constants=tri_profile().constants)
    sigma = tri_profile().sigma
    far = tp.r >= 40
    assert far.sum() > 0
    assert np.all(np.abs(tp.J[far] - sigma) <= 0.02 * sigma)


def test_transverse_of_constant_well_is_zero(sweep, tri_par):
    ig = _constant_interface(sweep[80]["test"], tri_par, 80.0)
    mc = minimal_curve(ig)
    s = DiskSampler.constant(tri().a, tri(), 80.0)
    tp = transverse_profile(s, mc, ig)
    assert np.all(np.abs(tp.J) <= 1e-25)


def test_sweep_transverse_below_total(sweep):
    for R in (40, 80):
        t = sweep[R]["analysis"].report["transverse"]
        assert 3 * t["integral"] <= sweep[R]["report"].energy
        assert t["lower_bound_checked"] > 0


# ---------------------------------------------------------------- decay


def planted_field(rate, C=0.5, r_ring=3.0, eps=0.1):
    p = tri()
    g = PolarGrid(40.0, 96, 96, 3)
    rr, tt = g.coords()
    u = np.repeat(np.repeat(p.a[None, None], g.n_r, 0), g.n_theta, 1)
    inside = (rr > r_ring) & (tt > C / np.sqrt(rr)) & (tt < g.sector - C / np.sqrt(rr))
    d = sector_distance(rr[inside], tt[inside], C, r_ring, g.sector, r_out=2 * g.R)
    n_hat = np.array([0.6, 0.8])
    u[inside] = p.a + eps * np.exp(-rate * d)[:, None] * n_hat
    return EquivariantField(g, u, p)


@pytest.mark.parametrize("rate", [0.4, 0.7, 1.1])
def test_planted_decay_recovered(rate):
    fit = decay_fit(planted_field(rate), 0.5, 3.0)
    assert abs(fit.k - rate) <= 0.02
    assert abs(fit.k - rate) <= 0.03 * rate
    assert fit.rms < 1e-5


def test_decay_needs_data_and_admissible_sector():
    p = tri()
    g = PolarGrid(40.0, 64, 48, 3)
    flat = EquivariantField(g, np.broadcast_to(p.a, (64, 48, 2)).copy(), p)
    with pytest.raises(InsufficientDataError):
        decay_fit(flat, 0.5, 3.0)
    with pytest.raises(ParameterError):
        decay_fit(flat, 2.0, 0.5 * min_r_ring(2.0, 3))
    with pytest.raises(InsufficientDataError):
        decay_fit_values(np.arange(10.0), np.ones(10))


@settings(max_examples=30, deadline=None)
@given(rate=st.floats(0.05, 3.0), K=st.floats(1e-6, 10.0))
def test_decay_values_exact_on_exponentials(rate, K):
    d = np.linspace(0, 5, 60)
    Kf, kf, rms = decay_fit_values(d, K * np.exp(-rate * d))
    assert kf == pytest.approx(rate, rel=1e-8)
    assert Kf == pytest.approx(K, rel=1e-8)


def test_sweep_decay(sweep):
    for R in (40, 80):
        dec = sweep[R]["analysis"].report["decay"]
        assert dec["k"] > 0 and dec["rms"] < 0.5


# ---------------------------------------------------------------- pointwise estimate


def test_pointwise_gating_on_test_map(sweep, tri_par):
    f = sweep[40]["test"]
    sig = detect_sigma(f, tri_par)
    l = default_ball_radius(f, tri_par, connect1d.tail_rate(tri_profile()))
    # every candidate sampled: points on the layer ray violate the conclusion unless gated out
    rep = pointwise_check(f, sig, tri_par, l, sample_count=10 ** 7)
    assert rep.tested > 0
    assert rep.tested < rep.sampled
    assert rep.violations == []


def test_pointwise_ball_floor(sweep, tri_par):
    f = sweep[20]["test"]
    with pytest.raises(ParameterError):
        pointwise_check(f, detect_sigma(f, tri_par), tri_par, 1e-3)


def test_sweep_pointwise_clean(sweep):
    for R in (20, 40, 80):
        pw = sweep[R]["analysis"].report["pointwise"]
        assert pw["sampled"] == 200 and pw["violations"] == 0
