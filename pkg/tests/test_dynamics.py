import math

import pytest
from hypothesis import given, strategies as st

from divland.dynamics import (ReferenceTrajectory, VerticalState, reference_at,
                              step, true_divergence)
from divland.errors import UndefinedDivergenceError


def test_zero_dynamics():
    s = step(VerticalState(0.0, 1.0, 0.0), 0.0, 0.05)
    assert (s.Z, s.V_Z) == (1.0, 0.0)
    assert s.t == pytest.approx(0.05)


def test_ballistic_step():
    s = step(VerticalState(0.0, 1.0, -1.0), 0.0, 0.05)
    assert s.Z == pytest.approx(0.95, abs=1e-15)
    assert s.V_Z == -1.0


def test_touchdown_inside_step():
    s = step(VerticalState(0.0, 0.02, -1.0), 0.0, 0.05)
    assert s.touched_down
    assert s.Z == 0.0
    assert s.touchdown_speed == pytest.approx(1.0)
    # contact at 0.02 s, not at the end of the sample
    assert s.t == pytest.approx(0.02)
    assert step(s, 5.0, 0.05) is s


def test_touchdown_on_contact_plane():
    s = step(VerticalState(0.0, 0.05, -1.0), 0.0, 0.05, ground=0.03)
    assert s.touched_down and s.Z == 0.03
    assert s.t == pytest.approx(0.02)


def test_zoh_matches_closed_form_under_thrust():
    Z, V, mu, dt = 2.0, -0.4, 0.7, 0.05
    s = step(VerticalState(0.0, Z, V), mu, dt)
    assert s.Z == pytest.approx(Z + V * dt + 0.5 * mu * dt ** 2, abs=1e-15)
    assert s.V_Z == pytest.approx(V + mu * dt, abs=1e-15)


def test_step_rejects_bad_input():
    with pytest.raises(ValueError):
        step(VerticalState(0.0, 1.0, 0.0), 0.0, 0.0)
    with pytest.raises(ValueError):
        step(VerticalState(0.0, 1.0, 0.0), math.nan, 0.05)


@pytest.mark.parametrize("Z,V,D", [(2, -0.6, -0.3), (5, 0, 0.0), (0.5, 0.1, 0.2)])
def test_true_divergence(Z, V, D):
    assert true_divergence(VerticalState(0.0, Z, V)) == pytest.approx(D)


@pytest.mark.parametrize("Z", [0.0, -1.0])
def test_divergence_undefined_on_ground(Z):
    with pytest.raises(UndefinedDivergenceError):
        true_divergence(VerticalState(0.0, Z, -1.0))


def test_reference_at_start():
    assert reference_at(ReferenceTrajectory(1.0, 0.3), 0.0) == pytest.approx((1.0, -0.3, 0.09))


def test_reference_at_derived():
    Z, V, A = reference_at(ReferenceTrajectory(1.0, 2.0), 1.0)
    e2 = math.exp(-2.0)
    assert (Z, V, A) == pytest.approx((e2, -2 * e2, 4 * e2), rel=1e-15)
    assert Z == pytest.approx(0.13534, abs=1e-5)
    assert V == pytest.approx(-0.27067, abs=1e-5)
    assert A == pytest.approx(0.54134, abs=1e-5)


def test_negative_rate_does_not_converge():
    traj = ReferenceTrajectory(1.0, -2.0)
    assert not traj.converges
    assert not ReferenceTrajectory(1.0, 0.0).converges
    assert ReferenceTrajectory(1.0, 0.3).converges
    assert reference_at(traj, 10.0)[0] > 1e8


@given(st.floats(0.1, 50), st.floats(-5, 5), st.integers(1, 40), st.floats(0.01, 0.1))
def test_free_fall_free_motion_is_affine(Z0, V0, n, dt):
    s = VerticalState(0.0, Z0 + 10 * abs(V0) * n * dt, V0)
    start = s.Z
    for _ in range(n):
        s = step(s, 0.0, dt)
    assert s.V_Z == V0
    assert s.Z == pytest.approx(start + V0 * n * dt, rel=1e-12, abs=1e-12)


@given(st.floats(0.1, 100), st.floats(-3, 3), st.floats(0, 30))
def test_reference_divergence_is_constant(Z0, k, t):
    Z, V, _ = reference_at(ReferenceTrajectory(Z0, k), t)
    if Z > 0:
        assert true_divergence(VerticalState(t, Z, V)) == pytest.approx(-k, rel=1e-12, abs=1e-15)


def _touchdown_time(Z0, V0, dt=0.05):
    s = VerticalState(0.0, Z0, V0)
    while s.airborne:
        s = step(s, 0.0, dt)
    return s.t


@given(st.floats(0.1, 10), st.floats(0.05, 5), st.floats(0.0, 5))
def test_touchdown_time_non_increasing_in_speed(Z0, v, extra):
    assert _touchdown_time(Z0, -(v + extra)) <= _touchdown_time(Z0, -v) + 1e-12
