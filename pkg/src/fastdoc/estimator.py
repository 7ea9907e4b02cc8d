"""scikit-learn style wrapper around the vehicle imitation-learning loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .forward import SqpSettings, solve_ocp
from .vehicle import (
    HORIZON,
    NX,
    THETA_INIT,
    Demonstration,
    TrainingConfig,
    VehicleOcp,
    imitation_step,
    train,
)


class ImitationLearner(BaseEstimator):
    """Fit cost parameters ``theta = (w, D, alpha)`` to a demonstration.

    ``fit`` runs projected gradient descent on the trajectory imitation
    loss. ``max_iter`` and ``learning_rate`` default to the per-scenario
    settings of the demonstration. Fitted attributes: ``theta_``,
    ``loss_curve_``, ``n_iter_``.
    """

    def __init__(self, theta_init=None, max_iter=None, learning_rate=None, hessian_mode="gauss_newton"):
        self.theta_init = theta_init
        self.max_iter = max_iter
        self.learning_rate = learning_rate
        self.hessian_mode = hessian_mode

    def fit(self, demo: Demonstration, y=None):
        theta0 = THETA_INIT if self.theta_init is None else np.asarray(self.theta_init, dtype=np.float64)
        cfg = TrainingConfig(
            scenario=demo.scenario,
            max_iter=self.max_iter,
            learning_rate=self.learning_rate,
            theta_init=theta0.copy(),
            hessian_mode=self.hessian_mode,
        )
        log = train(cfg, demo)
        self.theta_ = log.theta
        self.loss_curve_ = np.asarray(log.losses)
        self.n_iter_ = len(log.losses) - 1
        self.log_ = log
        return self

    def predict(self, demo: Demonstration):
        """Planned trajectory of every demonstration segment, one row each."""
        check_is_fitted(self, "theta_")
        rows = []
        for _, tau, xi in demo.segments(HORIZON):
            ocp = VehicleOcp(tau, xi[:NX], demo.dt)
            rows.append(solve_ocp(ocp, self.theta_, xi[:NX], SqpSettings()).xi)
        return np.array(rows)

    def score(self, demo: Demonstration, y=None):
        """Negative imitation loss at the fitted parameters."""
        check_is_fitted(self, "theta_")
        return -imitation_step(self.theta_, demo, hessian_mode=self.hessian_mode).loss
