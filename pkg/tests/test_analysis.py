import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from numpy.polynomial import Polynomial

from divland import analysis as an

P = an.LinearizationPoint


def _independent_char_poly(point, K_p, kappa):
    """1 + G F = 0 cleared of denominators, G built from (Phi, Gamma, C)."""
    s = Polynomial([0.0, 1.0])
    Z, V, dt = point.Z, point.V_Z, point.dt
    # adj(sI - Phi) Gamma for Phi = [[1, dt], [0, 1]]
    top = (s - 1) * dt ** 2 / 2 + dt * dt
    bottom = (s - 1) * dt
    num_g = (-V / Z ** 2) * top + (1 / Z) * bottom
    den_g = (s - 1) ** 2
    K_i = K_p / kappa
    num_f = K_p * (s - 1) + K_i * dt / 2 * (s + 1)
    den_f = s - 1
    return den_g * den_f + num_g * num_f


def _sorted(r):
    r = np.asarray(r)
    return r[np.lexsort((np.round(r.imag, 6), np.round(r.real, 6)))]


def test_zeros_examples():
    s01, _ = an.zeros(P(1.0, -0.5, 0.05), 6.0)
    assert s01 == pytest.approx(1.975 / 2.025, rel=1e-15)
    assert s01 == pytest.approx(0.97531, abs=1e-5)
    assert an.zeros(P(1.0, 0.0, 0.05), 0.025)[1] == 0.0
    assert an.zeros(P(3.0, 0.0, 0.05), 6.0)[0] == 1.0


def test_critical_gain_examples():
    assert an.critical_gain(P(100, 0, 0.03)) == pytest.approx(6666.67, abs=0.01)
    assert an.critical_gain(P(10, 0, 0.03)) == pytest.approx(666.67, abs=0.01)
    assert round(an.critical_gain(P(100, 0, 0.03))) == 6667
    assert an.critical_gain(P(1, 0, 0.05)) == 40.0


def test_root_at_minus_one_at_critical_gain():
    pt = P(10, 0, 0.03)
    r = an.characteristic_roots(pt, an.critical_gain(pt), 1e6)
    assert np.min(np.abs(r + 1)) < 1e-6


def test_triple_pole_at_zero_gain():
    assert np.array_equal(an.characteristic_roots(P(5, -1, 0.05), 0.0, 3.0), np.ones(3))


def test_gain_bracket_on_descent():
    # V_Z < 0: at hover one pole sits on the unit circle for every gain
    pt = P(10, -3.0, 0.03)
    K_cr = an.critical_gain(pt)
    assert an.max_pole_magnitude(pt, 0.95 * K_cr, 1e6) < 1
    assert an.max_pole_magnitude(pt, 1.05 * K_cr, 1e6) > 1
    rep = an.stability_report(pt, 0.95 * K_cr, 1e6)
    assert rep.stable and rep.margin > 0 and rep.K_cr == K_cr


@pytest.mark.parametrize("kappa", [0.02, 0.3, 6.0, math.inf])
@pytest.mark.parametrize("V", [0.0, -0.5, -3.0, 1.0])
def test_characteristic_poly_matches_state_space_route(kappa, V):
    pt = P(4.0, V, 0.05)
    for K in (0.5, 20.0, 150.0):
        mine = an.characteristic_roots(pt, K, kappa)
        if math.isinf(kappa):
            ref = _independent_char_poly(pt, K, 1e300).roots()
        else:
            ref = _independent_char_poly(pt, K, kappa).roots()
        assert _sorted(mine) == pytest.approx(_sorted(ref), abs=1e-6)


def test_open_loop_two_routes():
    pt = P(3.0, -0.7, 0.05)
    s = np.array([0.3 + 0.4j, -0.9, 2.0, 0.99j])
    assert an.open_loop(pt, s) == pytest.approx(an.open_loop_state_space(pt, s), rel=1e-12)
    assert np.isnan(an.open_loop(pt, 1.0))
    assert np.isnan(an.open_loop_state_space(pt, 1.0))


def test_closed_loop_two_routes():
    pt = P(2.0, -0.6, 0.05)
    s = np.exp(1j * np.linspace(0.1, 3.0, 25)) * 0.9
    for kappa in (0.1, 6.0):
        a = an.closed_loop(pt, 7.0, kappa, s)
        b = an.closed_loop_from_parts(pt, 7.0, kappa, s)
        assert a == pytest.approx(b, rel=1e-10)


def test_closed_loop_zero_gain():
    s = np.array([0.2, -0.5 + 0.1j, 3.0])
    assert np.all(an.closed_loop(P(2.0, -0.3), 0.0, 6.0, s) == 0)


def test_closed_loop_at_a_pole_is_flagged():
    pt = P(2.0, 0.0, 0.05)
    # K_p = 0: the closed-loop denominator vanishes at sigma = 1
    assert np.isnan(an.closed_loop(pt, 0.0, 6.0, 1.0))


def test_companion_roots():
    coef = [6.0, -5.0, 1.0]                    # (s - 2)(s - 3)
    assert np.sort(an.companion_roots(coef).real) == pytest.approx([2.0, 3.0])
    r = an.companion_roots([1.0, 2.0, 0.0])    # degree drop
    assert np.isinf(r[-1]) and r[0] == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        an.companion_roots([0.0, 0.0])


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=6))
def test_companion_matches_reference(rts):
    # simple roots only; a root of multiplicity m is only good to eps^(1/m)
    assume(np.min(np.diff(np.sort(rts))) > 0.1)
    coef = np.poly(rts)[::-1]
    got = np.sort_complex(an.companion_roots(coef))
    assert got.real == pytest.approx(np.sort(rts), abs=1e-6)
    assert np.abs(got.imag).max() < 1e-6


def test_circle_examples():
    # sigma_02 = 0: unit circle; sigma_02 = 0.5: centre 0.5, radius 0.5
    for s02, centre, radius in ((0.0, 0.0, 1.0), (0.5, 0.5, 0.5)):
        for K in (0.01, 0.1, 0.5):
            r = an.approx_roots(K, s02)
            assert np.abs(r - centre) == pytest.approx([radius, radius], abs=1e-12)


@given(st.floats(0.01, 0.999), st.floats(1e-4, 3.0))
def test_approximate_roots_on_circle(s02, K):
    r = an.approx_roots(K, s02)
    assume(np.all(np.abs(r.imag) > 1e-9))
    assert an.circle_deviation(r, s02) < 1e-9


def test_circle_exact_at_hover():
    pt = P(10.0, 0.0, 0.03)
    gains = np.geomspace(1, 600, 50)
    assert an.circle_locus_check(pt, 3.0, gains) < 1e-9
    assert an.circle_locus_check(pt, 3.0, gains, full=True) < 1e-9


@given(st.floats(0.5, 200), st.floats(-1.0, 0.2), st.floats(0.01, 0.1), st.floats(1.0, 1e4))
def test_minus_one_is_a_root_at_critical_gain(Z, Vrel, dt, kmul):
    pt = P(Z, Vrel * Z, dt)
    kappa = kmul * dt
    poly = an.characteristic_poly(pt, an.critical_gain(pt), kappa)
    scale = np.max(np.abs(poly.coef))
    assert abs(poly(-1.0)) <= 1e-12 * scale


@pytest.mark.parametrize("Z,dt", [(1, 0.05), (10, 0.03), (100, 0.03)])
@pytest.mark.parametrize("Vrel", [-0.1, -0.5])
def test_instability_threshold_brackets_critical_gain(Z, dt, Vrel):
    pt = P(Z, Vrel * Z, dt)
    K = an.instability_threshold(pt, 10 * dt)
    assert 0.99 <= K / an.critical_gain(pt) <= 1.01


def test_kappa_rule():
    dt = 0.03
    pt = P(10.0, 0.0, dt)
    gains = np.geomspace(1, 660, 300)
    for kappa in (dt / 2, 0.05, 3.0):
        _, s02 = an.zeros(pt, kappa)
        for k in gains:
            r = an.approx_roots(an.circle_gain(pt, k, kappa), s02)
            if np.any(np.abs(r.imag) > 0):
                assert np.max(np.abs(r)) <= 1 + 1e-9
    unstable = [an.max_pole_magnitude(pt, k, 0.01) > 1 for k in gains]
    assert any(unstable)


def test_pole_zero_cancellation_at_huge_gain():
    pt = P(5.0, -1.0, 0.05)
    kappa = 2.0
    s01, s02 = an.zeros(pt, kappa)
    r = an.characteristic_roots(pt, 1e6 * an.critical_gain(pt), kappa)
    assert np.min(np.abs(r - s01)) < 1e-3
    assert np.min(np.abs(r - s02)) < 1e-3


def test_root_locus_branches_are_continuous(tmp_path):
    pt = P(10.0, -1.0, 0.03)
    gains = np.geomspace(1, 1300, 400)
    loc = an.root_locus(pt, 3.0, gains)
    assert loc.shape == (400, 3)
    assert np.max(np.abs(np.diff(loc, axis=0))) < 0.1
    rows = an.locus_rows(gains, loc)
    path = tmp_path / "locus.csv"
    an.write_locus_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(an.LOCUS_COLUMNS)
    assert len(lines) == 401
    with pytest.raises(ValueError):
        an.root_locus(pt, 3.0, [2.0, 1.0])


def test_stability_map_shape_and_content():
    pt = P(10.0, -3.0, 0.03)
    K_cr = an.critical_gain(pt)
    m = an.stability_map(pt, [0.01, 3.0], [0.5 * K_cr, 1.5 * K_cr])
    assert m.shape == (2, 2)
    assert not m[0].any()          # kappa below dt / 2
    assert m[1, 0] and not m[1, 1]


def test_input_validation():
    with pytest.raises(ValueError):
        P(0.0)
    with pytest.raises(ValueError):
        an.zeros(P(1.0), 0.0)
    with pytest.raises(ValueError):
        an.characteristic_poly(P(1.0), -1.0, 6.0)
