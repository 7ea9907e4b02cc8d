import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fastdoc.estimator import ImitationLearner
from fastdoc.vehicle import DEFAULT_THETA_STAR, THETA_INIT, generate_demo


@pytest.fixture(scope="module")
def demo():
    return generate_demo(DEFAULT_THETA_STAR, "straight", steps=10)


def test_params_and_clone():
    est = ImitationLearner(max_iter=3, learning_rate=0.01)
    assert est.get_params()["max_iter"] == 3
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin is not est


def test_unfitted(demo):
    with pytest.raises(NotFittedError):
        ImitationLearner().predict(demo)


def test_fit_score_predict(demo):
    est = ImitationLearner(max_iter=5, learning_rate=0.01).fit(demo)
    assert est.n_iter_ == 5
    assert est.loss_curve_.shape == (6,)
    assert est.loss_curve_[-1] < est.loss_curve_[0]
    assert est.score(demo) == pytest.approx(-est.loss_curve_[-1])
    pred = est.predict(demo)
    assert pred.shape == (len(demo.segments()), 5 * 9 + 7)
    assert not np.array_equal(est.theta_, THETA_INIT)


def test_true_parameters_score_perfectly(demo):
    est = ImitationLearner(theta_init=DEFAULT_THETA_STAR, max_iter=0).fit(demo)
    assert est.score(demo) >= -1e-8
