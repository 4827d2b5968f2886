import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resdiff.forward import (
    DiffusionState,
    TripletBatch,
    forward_step,
    forward_trajectory,
    marginal_params,
    synthesize,
    synthesize_from_input,
)
from resdiff.numerics import RandomStream, ShapeError
from resdiff.schedules import CoefficientSchedule, make_schedule


def _two_step(alpha, beta_sq):
    return CoefficientSchedule.from_increments(np.array(alpha), np.array(beta_sq))


def test_noise_free_step():
    s = _two_step([0.3, 0.7], [0.0, 1.0])
    out = forward_step(DiffusionState(np.zeros(1), 0, s), np.ones(1), RandomStream(0))
    np.testing.assert_allclose(out.x, [0.3])
    assert out.t == 1


def test_identity_step():
    s = _two_step([0.0, 1.0], [0.0, 1.0])
    x = np.array([1.5, -2.0])
    np.testing.assert_array_equal(forward_step(DiffusionState(x, 0, s), np.ones(2), RandomStream(0)).x, x)


def test_step_at_T_rejected():
    s = make_schedule("mean", 3)
    with pytest.raises(ValueError):
        forward_step(DiffusionState(np.zeros(1), 3, s), np.zeros(1), RandomStream(0))


def test_single_step_moments():
    s = make_schedule("mean", 10)
    n, t0 = 100_000, 4
    prev = np.full((n, 1), 0.7)
    out = forward_step(DiffusionState(prev, t0, s), np.full((n, 1), 2.0), RandomStream(3)).x
    beta = np.sqrt(s.beta_sq[t0 + 1])
    assert abs(out.mean() - (0.7 + s.alpha[t0 + 1] * 2.0)) < 4 * beta / np.sqrt(n)
    assert abs(out.var() / beta**2 - 1) < 0.02


def test_terminal_state_is_noisy_input():
    s = make_schedule("dec-inc", 100, 0.01)
    trip = TripletBatch.from_pair(np.array([[0.2, -0.4]]), np.array([[0.5, 0.1]]))
    st_, eps = synthesize(trip, 100, s, RandomStream(1))
    np.testing.assert_allclose(st_.x, trip.i_in + s.beta_bar[100] * eps, atol=1e-15)
    zero, _ = synthesize(trip, 100, s, RandomStream(1), eps=np.zeros((1, 2)))
    np.testing.assert_allclose(zero.x, trip.i_in, atol=1e-15)


def test_synthesize_deterministic_arithmetic():
    s = CoefficientSchedule.from_cumulatives(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.5, 1.0]))
    trip = TripletBatch(np.array([2.0]), np.array([4.0]), np.array([2.0]))
    x, _ = synthesize(trip, 1, s, RandomStream(0), eps=np.zeros(1))
    assert x.x[0] == 3.0
    assert synthesize_from_input(np.array([3.0]), np.array([2.0]), 1, s, np.zeros(1))[0] == 2.0


def test_from_input_ignores_residual_at_one():
    s = make_schedule("mean", 20)
    eps = np.array([0.3])
    a = synthesize_from_input(np.array([1.0]), np.array([5.0]), 20, s, eps)
    b = synthesize_from_input(np.array([1.0]), np.array([-9.0]), 20, s, eps)
    np.testing.assert_allclose(a, b, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 100), st.integers(0, 2**31))
def test_two_closed_forms_agree(t, seed):
    s = make_schedule("dec-inc", 100)
    rs = RandomStream(seed)
    trip = TripletBatch.from_pair(rs.normal((4, 3)), rs.normal((4, 3)))
    x, eps = synthesize(trip, t, s, rs)
    assert np.abs(x.x - synthesize_from_input(trip.i_in, trip.i_res, t, s, eps)).max() < 1e-12


@pytest.mark.parametrize("t", [0, 101])
def test_synthesize_range(t):
    s = make_schedule("mean", 100)
    trip = TripletBatch.from_pair(np.zeros((1, 1)), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        synthesize(trip, t, s, RandomStream(0))


def test_shape_mismatch():
    s = make_schedule("mean", 10)
    with pytest.raises(ShapeError):
        synthesize_from_input(np.zeros(2), np.zeros(3), 1, s, np.zeros(2))


def test_triplet_invariant():
    with pytest.raises(ValueError):
        TripletBatch(np.zeros(2), np.ones(2), np.zeros(2))
    with pytest.raises(ShapeError):
        TripletBatch(np.zeros(2), np.zeros(3), np.zeros(2))


def test_marginal_params():
    s = make_schedule("mean", 1000)
    assert marginal_params(1000, s) == pytest.approx((1.0, 1.0, 1.0), abs=1e-12)
    inc = make_schedule("increasing", 1000)
    assert marginal_params(1, inc)[2] == pytest.approx(np.sqrt(inc.beta_sq[1]), rel=1e-15)
    assert marginal_params(400, inc)[2] == pytest.approx(np.sqrt(inc.beta_sq[1:401].sum()), rel=1e-12)


def test_telescoping_moments():
    s = make_schedule("increasing", 50)
    n = 100_000
    i0, i_res = np.array([0.3, -0.2]), np.array([-0.5, 0.8])
    trip = TripletBatch.from_pair(np.tile(i0, (n, 1)), np.tile(i0 + i_res, (n, 1)))
    traj = forward_trajectory(trip, s, RandomStream(4), t_end=50)
    for t in (1, 25, 50):
        bb = s.beta_bar[t]
        assert np.abs(traj[t].mean(0) - (i0 + s.alpha_bar[t] * i_res)).max() < 4 * bb / np.sqrt(n)
        assert np.abs(traj[t].var(0) / bb**2 - 1).max() < 0.02
