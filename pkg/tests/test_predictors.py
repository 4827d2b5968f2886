import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resdiff.forward import TripletBatch, synthesize
from resdiff.numerics import RandomStream, ShapeError
from resdiff.predictors import (
    GaussianOraclePredictor,
    GaussianTaskParams,
    GroundTruthPredictor,
    MlpModel,
    MlpPredictor,
    PairedPredictor,
    PathPoint,
    SingularConversionError,
    convert_noise_to_residual,
    convert_residual_to_noise,
    gaussian_oracle_predict,
    gaussian_posterior_mean,
    mlp_predict,
    noise_to_residual,
    residual_to_noise,
    time_condition,
    time_embedding,
)
from resdiff.schedules import CoefficientSchedule, make_schedule

# Quadrature of the unnormalized posterior (mu=0, s2=1, c=0.5, bbar=0.5, I_t=1).
POSTERIOR_MEAN_QUADRATURE = 1.0
# Recorded at first build: MlpModel(2, hidden=8, embed_dim=4, seed=3) on two fixed inputs.
GOLDEN_MLP = ["-0x1.e6710d44b47d6p-1", "0x1.47ae8492fd601p-2", "-0x1.2fab8d3475ca9p-1", "-0x1.10a4d6802b001p-1"]


def _half_schedule():
    # t=1: abar = 0.5, bbar = 0.5; t=2: abar = 1, bbar = 1
    return CoefficientSchedule.from_cumulatives(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.5, 1.0]))


def test_noise_to_residual_example():
    s = _half_schedule()
    out = convert_noise_to_residual(np.array([1.0]), np.array([1.0]), np.zeros(1), 1, s)
    assert out[0] == -1.0


def test_residual_to_noise_example():
    s = _half_schedule()
    out = convert_residual_to_noise(np.array([-1.0]), np.array([1.0]), np.zeros(1), 1, s)
    assert out[0] == 1.0


def test_recorded_noise_recovers_residual():
    s = make_schedule("linear", 1000)
    rs = RandomStream(0)
    trip = TripletBatch.from_pair(rs.normal((5, 3)), rs.normal((5, 3)))
    for t in (1, 400, 1000):
        x, eps = synthesize(trip, t, s, rs)
        res = convert_noise_to_residual(eps, x.x, trip.i_in, t, s)
        np.testing.assert_allclose(res, trip.i_res, rtol=0, atol=1e-12 / (1 - s.alpha_bar[t]) * 10)
        back = convert_residual_to_noise(trip.i_res, x.x, trip.i_in, t, s)
        np.testing.assert_allclose(back, eps, rtol=0, atol=1e-12 / s.beta_bar[t] * 10)


def test_singular_conversions_raise_with_remedy():
    s = _half_schedule()
    with pytest.raises(SingularConversionError, match="t=2.*SM-Res"):
        convert_noise_to_residual(np.zeros(1), np.zeros(1), np.zeros(1), 2, s)
    with pytest.raises(SingularConversionError, match="beta_bar"):
        residual_to_noise(np.zeros(1), np.zeros(1), np.zeros(1), 0.3, 0.0)
    with pytest.raises(SingularConversionError):
        noise_to_residual(np.zeros(1), np.zeros(1), np.zeros(1), 1.0 - 1e-9, 0.5)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.99), st.floats(0.01, 1.0), st.integers(0, 2**31))
def test_conversion_roundtrip(ab, bb, seed):
    rs = RandomStream(seed)
    x, i_in, v = rs.normal(4), rs.normal(4), rs.normal(4)
    there = residual_to_noise(v, x, i_in, ab, bb)
    np.testing.assert_allclose(noise_to_residual(there, x, i_in, ab, bb), v, rtol=0, atol=1e-12)


def test_oracle_conjugate_example():
    params = GaussianTaskParams(np.zeros(1), np.ones(1))
    e0 = gaussian_posterior_mean(np.array([1.0]), np.zeros(1), 0.5, 0.5, params)
    assert e0[0] == pytest.approx(POSTERIOR_MEAN_QUADRATURE, abs=1e-12)
    res, eps = gaussian_oracle_predict(np.array([1.0]), 1, params, _half_schedule())
    assert res[0] == pytest.approx(-1.0, abs=1e-12)
    assert eps[0] == pytest.approx((1.0 - 0.5 * 1.0) / 0.5, abs=1e-12)


def test_oracle_noiseless_limit():
    params = GaussianTaskParams(np.array([0.4]), np.array([2.0]))
    x = np.array([0.9])
    e0 = gaussian_posterior_mean(x, np.zeros(1), 0.3, 1e-9, params)
    assert e0[0] == pytest.approx(x[0] / 0.7, rel=1e-12)


def test_oracle_undefined_point():
    params = GaussianTaskParams(np.zeros(2), np.ones(2))
    with pytest.raises(SingularConversionError):
        gaussian_posterior_mean(np.zeros(2), np.zeros(2), 1.0, 0.0, params)
    # The path-following predictor knows I_t = I_in there and falls back on the prior.
    res, _ = GaussianOraclePredictor(params).predict(np.zeros((1, 2)), np.zeros((1, 2)),
                                                      PathPoint(5, 1.0, 0.0, 5), frozenset({"res"}))
    np.testing.assert_array_equal(res, np.zeros((1, 2)))


def test_oracle_beats_perturbed_linear_predictors():
    params = GaussianTaskParams(np.array([1.0, -0.5]), np.array([0.25, 0.5]))
    s = make_schedule("linear", 1000)
    rs = RandomStream(6)
    n, t = 100_000, 300
    i0 = params.mu + np.sqrt(params.s_sq) * rs.normal((n, 2))
    trip = TripletBatch.from_pair(i0, np.zeros_like(i0))
    x, _ = synthesize(trip, t, s, rs)
    oracle = GaussianOraclePredictor(params)
    point = PathPoint.on_schedule(t, s)
    res = oracle.predict(x.x, trip.i_in, point)[0]
    best = np.mean((res - trip.i_res) ** 2)
    for _ in range(20):
        gain, shift = 0.05 * rs.normal(2), 0.05 * rs.normal(2)
        alt = res + gain * x.x + shift
        assert np.mean((alt - trip.i_res) ** 2) - best > 0


def test_ground_truth_replay():
    r, e = np.ones((2, 2)), np.zeros((2, 2))
    gt = GroundTruthPredictor(r, e)
    out = gt.predict(None, None, None, frozenset({"eps"}))
    assert out[0] is None
    np.testing.assert_array_equal(out[1], e)
    with pytest.raises(ShapeError):
        GroundTruthPredictor(np.ones(2), np.ones(3))


def test_time_embedding_layout():
    e = time_embedding(np.array([0.0, 3.0]), 8)
    assert e.shape == (2, 8)
    np.testing.assert_array_equal(e[0], [0, 0, 0, 0, 1, 1, 1, 1])
    assert e[1, 0] == np.sin(3.0)


def test_time_condition_modes():
    p = PathPoint(10, 0.25, 0.5, 100)
    assert time_condition("index", p) == 10.0
    assert time_condition("alpha", p) == 25.0
    assert time_condition("beta", p) == 50.0
    with pytest.raises(ValueError):
        time_condition("gamma", p)


def test_zero_weights_zero_output():
    m = MlpModel(3, hidden=5, embed_dim=4)
    for k in m.params:
        m.params[k] = np.zeros_like(m.params[k])
    np.testing.assert_array_equal(mlp_predict(m, np.ones((2, 3)), 7.0, np.ones((2, 3))), np.zeros((2, 3)))


def test_golden_mlp_output():
    m = MlpModel(2, hidden=8, embed_dim=4, heads=1, seed=3)
    out = m.forward(np.array([[0.1, -0.2], [0.5, 0.25]]), np.zeros((2, 2)), np.array([5.0, 700.0]))
    assert [float(v).hex() for v in out.ravel()] == GOLDEN_MLP


def test_glorot_init_bounds():
    m = MlpModel(4, hidden=16, embed_dim=8, seed=2)
    for name, shape in m.shapes().items():
        assert m.params[name].shape == shape
        if name.startswith("W"):
            assert np.abs(m.params[name]).max() <= np.sqrt(6 / sum(shape))
        else:
            assert not m.params[name].any()


def test_two_headed_shapes():
    m = MlpModel(3, hidden=8, embed_dim=4, heads=2)
    res, eps = MlpPredictor(m, "both").predict(np.ones((5, 3)), np.zeros((5, 3)), PathPoint(1, 0.1, 0.2, 10))
    assert res.shape == eps.shape == (5, 3)


def test_mlp_shape_mismatch():
    m = MlpModel(3, hidden=8, embed_dim=4)
    with pytest.raises(ShapeError):
        m.forward(np.ones((2, 4)), np.ones((2, 4)), 1.0)


def test_predictor_output_contracts():
    with pytest.raises(ValueError):
        MlpPredictor(MlpModel(2, hidden=4, embed_dim=4, heads=1), "both")
    single = MlpPredictor(MlpModel(2, hidden=4, embed_dim=4), "residual")
    assert not single.independent
    with pytest.raises(ValueError):
        PairedPredictor(single, single)
    noise = MlpPredictor(MlpModel(2, hidden=4, embed_dim=4, seed=1), "noise")
    paired = PairedPredictor(single, noise)
    assert paired.independent and paired.outputs == "both"


def test_paired_predictor_uses_separate_conditions():
    res_net = MlpPredictor(MlpModel(2, hidden=4, embed_dim=4, seed=1), "residual")
    eps_net = MlpPredictor(MlpModel(2, hidden=4, embed_dim=4, seed=2), "noise")
    paired = PairedPredictor(res_net, eps_net)
    x, z = np.ones((1, 2)), np.zeros((1, 2))
    a = paired.predict(x, z, PathPoint(3, 0.2, 0.4, 10))
    b = paired.predict(x, z, PathPoint(3, 0.2, 0.9, 10))
    np.testing.assert_array_equal(a[0], b[0])  # residual net only sees alpha_bar * T
    assert not np.array_equal(a[1], b[1])
