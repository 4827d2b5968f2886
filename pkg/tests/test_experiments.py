import numpy as np
import pytest

from resdiff.experiments import path_experiment, path_sensitivities
from resdiff.forward import synthesize
from resdiff.numerics import RandomStream
from resdiff.predictors import GaussianOraclePredictor, GroundTruthPredictor, MlpModel, MlpPredictor
from resdiff.sampler import PlanError
from resdiff.schedules import make_schedule
from resdiff.tasks import gaussian_params, make_dataset, make_task


def _setup(n, family="dec-inc", seed=0):
    task = make_task("gaussian-2d")
    s = make_schedule(family, 1000)
    trip = make_dataset(task, n, RandomStream(seed, lane=20))
    return s, trip


def test_ground_truth_paths_agree():
    s, trip = _setup(200)
    rs = RandomStream(0, lane=21)
    _, eps = synthesize(trip, 1000, s, rs)
    report = path_experiment(GroundTruthPredictor(trip.i_res, eps), trip, s, eps_init=eps, stream=rs)
    for v in report.variants:
        assert v.energy < 1e-12 and v.displacement < 1e-12
    np.testing.assert_allclose(report.baseline, trip.i0, atol=1e-10)


def test_rerun_is_deterministic():
    s, trip = _setup(300)
    oracle = GaussianOraclePredictor(gaussian_params())
    a = path_experiment(oracle, trip, s, stream=RandomStream(1))
    b = path_experiment(oracle, trip, s, stream=RandomStream(1))
    np.testing.assert_array_equal(a.baseline, b.baseline)
    assert [v.energy for v in a.variants] == [v.energy for v in b.variants]


@pytest.mark.parametrize("family", ["dec-inc", "linear"])
def test_mild_reparameterizations_deviate_less(family):
    s, trip = _setup(2000, family)
    report = path_experiment(GaussianOraclePredictor(gaussian_params()), trip, s, stream=RandomStream(2))
    energy = {v.name: v.energy for v in report.variants}
    assert energy["alpha-power-0.5"] < energy["alpha-power-5"]
    assert energy["alpha-power-2"] < energy["alpha-power-5"]
    assert all(e >= 0 for e in energy.values())


def test_ground_truth_has_no_path_sensitivity():
    s, trip = _setup(50)
    rs = RandomStream(3)
    _, eps = synthesize(trip, 1000, s, rs)
    rb, ea = path_sensitivities(GroundTruthPredictor(trip.i_res, eps), trip, eps, s, [1000, 500, 100])
    assert rb == 0.0 and ea == 0.0


def test_single_network_rejected():
    s, trip = _setup(10)
    net = MlpPredictor(MlpModel(2, hidden=4, embed_dim=4, heads=2), "both")
    with pytest.raises(PlanError, match="separate"):
        path_experiment(net, trip, s)
