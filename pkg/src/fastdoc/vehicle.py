"""Kinematic vehicle tracking OCP and imitation learning of its cost parameters.

State ``(X, Y, phi, v, a, delta, delta_rate)``, control
``(jerk, steering acceleration)``, forward-Euler kinematics. The stage cost
penalizes the feature vector
``tau = (X_la, Y_la, phi, v, delta, a, jerk, delta_rate)`` against a reference,
where ``(X_la, Y_la)`` is a look-ahead point whose distance and steering
coupling are learnable. ``theta = (w[0..7], D, alpha)``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .deriv import blocklu_backward, fastdoc_backward
from .exceptions import (
    FastDocError,
    GradientNonFinite,
    NegativeWeight,
    SteeringSingularity,
    TrainingAborted,
)
from .forward import SqpSettings, solve_ocp
from .kkt import OcpDefinition, SolvedTrajectory, assemble_dkkt

NX, NU = 7, 2
N_FEATURES = 8
N_THETA = N_FEATURES + 2
HORIZON = 5
DT = 0.1
WHEELBASE = 2.7

KMH = 1.0 / 3.6
V_MAX = 30.0 * KMH
A_MAX = 2.0
JERK_MAX = 4.0
DELTA_MAX = math.pi / 6.0
DELTA_RATE_MAX = 1.5
STEER_GUARD = math.pi / 2.0 - 1e-6

Q_INIT = np.array([16.0, 16.0, 4.0, 8.0, 2.0, 1.0, 0.5, 1.0])
D_INIT = 14.0
ALPHA_INIT = 1.0
THETA_INIT = np.concatenate([Q_INIT, [D_INIT, ALPHA_INIT]])
# parameters behind the synthetic demonstrations
DEFAULT_THETA_STAR = np.array([12.0, 20.0, 6.0, 6.0, 3.0, 1.5, 0.8, 1.2, 11.0, 0.8])

# fixed weight on steering acceleration, which no feature covers
STEER_ACCEL_WEIGHT = 10.0
REF_LOOKAHEAD = D_INIT
REF_COUPLING = ALPHA_INIT
CURVE_RADIUS = 12.0
DEMO_STEPS = {"straight": 150, "curve": 100}
TABLE_SETTINGS = {"straight": (1000, 0.01), "curve": (300, 0.001)}
W_FLOOR = 1e-6
D_FLOOR = 0.1
MAX_FAILURES = 5

# feature order inside the state vector (-1 marks features not taken from x)
_STATE_FEATURES = {2: 2, 3: 3, 4: 5, 5: 4, 7: 6}
STATE_LOWER = np.array([-np.inf, -np.inf, -np.inf, 0.0, -A_MAX, -DELTA_MAX, -DELTA_RATE_MAX])
STATE_UPPER = np.array([np.inf, np.inf, np.inf, V_MAX, A_MAX, DELTA_MAX, DELTA_RATE_MAX])
_BOXED = np.flatnonzero(np.isfinite(STATE_UPPER))


def _check_steer(delta):
    if abs(delta) >= STEER_GUARD:
        raise SteeringSingularity(f"steering angle {delta:.6f} rad is too close to pi/2")


def vehicle_step(x, u, dt=DT, wheelbase=WHEELBASE):
    """One forward-Euler step of the 7-state kinematic model."""
    X, Y, phi, v, a, delta, rate = x
    _check_steer(delta)
    return np.array([
        X + dt * v * math.cos(phi),
        Y + dt * v * math.sin(phi),
        phi + dt * v / wheelbase * math.tan(delta),
        v + dt * a,
        a + dt * u[0],
        delta + dt * rate,
        rate + dt * u[1],
    ])


def vehicle_jacobians(x, u, dt=DT, wheelbase=WHEELBASE):
    """``(d f / d x, d f / d u)`` of :func:`vehicle_step`."""
    _, _, phi, v, _, delta, _ = x
    _check_steer(delta)
    c, s, t = math.cos(phi), math.sin(phi), math.tan(delta)
    Fx = np.eye(NX)
    Fx[0, 2], Fx[0, 3] = -dt * v * s, dt * c
    Fx[1, 2], Fx[1, 3] = dt * v * c, dt * s
    Fx[2, 3], Fx[2, 5] = dt * t / wheelbase, dt * v / wheelbase * (1.0 + t * t)
    Fx[3, 4] = dt
    Fx[5, 6] = dt
    Fu = np.zeros((NX, NU))
    Fu[4, 0] = dt
    Fu[6, 1] = dt
    return Fx, Fu


def lookahead_point(x, D, alpha):
    """Point at distance ``D`` along heading ``phi + alpha * delta``."""
    ang = x[2] + alpha * x[5]
    return x[0] + D * math.cos(ang), x[1] + D * math.sin(ang)


def features(x, u, D, alpha):
    """Feature vector; the jerk slot is 0 when ``u`` is ``None``."""
    X_la, Y_la = lookahead_point(x, D, alpha)
    jerk = 0.0 if u is None else u[0]
    return np.array([X_la, Y_la, x[2], x[3], x[5], x[4], jerk, x[6]])


def _feature_jacobians(x, D, alpha):
    """``d tau / d (x, u)`` (8 x 9) and ``d tau / d (D, alpha)`` (8 x 2)."""
    ang = x[2] + alpha * x[5]
    c, s = math.cos(ang), math.sin(ang)
    Jx = np.zeros((N_FEATURES, NX + NU))
    Jx[0, 0], Jx[0, 2], Jx[0, 5] = 1.0, -D * s, -D * alpha * s
    Jx[1, 1], Jx[1, 2], Jx[1, 5] = 1.0, D * c, D * alpha * c
    for feat, col in _STATE_FEATURES.items():
        Jx[feat, col] = 1.0
    Jx[6, NX] = 1.0
    Jp = np.zeros((N_FEATURES, 2))
    Jp[0] = [c, -D * s * x[5]]
    Jp[1] = [s, D * c * x[5]]
    return Jx, Jp


def _feature_second(x, D, alpha):
    """Second derivatives of the look-ahead features.

    Returns ``(d/dD, d/dalpha)`` of the look-ahead rows of the feature
    Jacobian, each ``2 x 9`` over ``(x, u)``.
    """
    ang = x[2] + alpha * x[5]
    c, s = math.cos(ang), math.sin(ang)
    d = x[5]
    dD = np.zeros((2, NX + NU))
    dD[0, 2], dD[0, 5] = -s, -alpha * s
    dD[1, 2], dD[1, 5] = c, alpha * c
    da = np.zeros((2, NX + NU))
    da[0, 2], da[0, 5] = -D * c * d, -D * s - D * alpha * c * d
    da[1, 2], da[1, 5] = -D * s * d, D * c - D * alpha * s * d
    return dD, da


def split_theta(theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (N_THETA,):
        raise ValueError(f"theta must have {N_THETA} entries, got shape {theta.shape}")
    return theta[:N_FEATURES], float(theta[N_FEATURES]), float(theta[N_FEATURES + 1])


def stage_cost_residual(x, u, tau_ref, theta):
    """``sqrt(w) * (tau - tau_ref)``, so a unit error in feature ``i`` costs ``w_i / 2``."""
    w, D, alpha = split_theta(theta)
    if np.any(w < 0.0):
        raise NegativeWeight("cost weights must be nonnegative")
    return np.sqrt(w) * (features(x, u, D, alpha) - np.asarray(tau_ref, dtype=np.float64))


def project_theta(theta):
    """Clip weights to ``>= 1e-6`` and the look-ahead distance to ``>= 0.1``."""
    out = np.array(theta, dtype=np.float64)
    out[:N_FEATURES] = np.maximum(out[:N_FEATURES], W_FLOOR)
    out[N_FEATURES] = max(out[N_FEATURES], D_FLOOR)
    return out


# ---------------------------------------------------------------------------
# reference


def _speed_profile(scenario, t):
    if scenario == "straight":
        v0, v1, t0, acc = 15.0 * KMH, 25.0 * KMH, 2.0, 1.2
        ramp = (v1 - v0) / acc
        v = np.where(t < t0, v0, np.where(t < t0 + ramp, v0 + acc * (t - t0), v1))
        a = np.where((t >= t0) & (t < t0 + ramp), acc, 0.0)
        s = np.where(
            t < t0, v0 * t,
            np.where(t < t0 + ramp, v0 * t + 0.5 * acc * (t - t0) ** 2,
                     v0 * t0 + (v0 + v1) * 0.5 * ramp + v1 * (t - t0 - ramp)),
        )
        return v, a, s
    v = np.full_like(t, 15.0 * KMH)
    return v, np.zeros_like(t), v * t


def _path(scenario, s):
    """Centerline position and heading at arc length ``s``."""
    if scenario == "straight":
        return s, np.zeros_like(s), np.zeros_like(s)
    R = CURVE_RADIUS
    return R * np.sin(s / R), R - R * np.cos(s / R), s / R


@dataclass(frozen=True)
class Reference:
    scenario: str
    dt: float
    tau: np.ndarray
    speed: np.ndarray
    accel: np.ndarray
    states: np.ndarray

    def __len__(self):
        return self.tau.shape[0]


def build_reference(scenario, dt=DT, horizon_total=DEMO_STEPS["straight"]) -> Reference:
    """Reference features for ``horizon_total`` samples of a scenario.

    ``straight`` runs along the X axis, holding 15 km/h for 2 s then ramping
    at 1.2 m/s^2 to 25 km/h. ``curve`` is a 12 m radius arc at 15 km/h. The
    reference features are those of a vehicle riding the centerline exactly,
    with look-ahead distance 14 m and unit coupling.
    """
    if scenario not in DEMO_STEPS:
        raise ValueError(f"unknown scenario {scenario!r}")
    n = int(horizon_total)
    if n < 0:
        raise ValueError("horizon_total must be nonnegative")
    t = dt * np.arange(n)
    v, a, s = _speed_profile(scenario, t)
    X, Y, phi = _path(scenario, s)
    delta = np.full(n, math.atan(WHEELBASE / CURVE_RADIUS) if scenario == "curve" else 0.0)
    states = np.column_stack([X, Y, phi, v, a, delta, np.zeros(n)]) if n else np.zeros((0, NX))
    tau = np.array([features(x, None, REF_LOOKAHEAD, REF_COUPLING) for x in states]).reshape(n, N_FEATURES)
    return Reference(scenario, float(dt), tau, v, a, states)


# ---------------------------------------------------------------------------
# OCP


class VehicleOcp(OcpDefinition):
    """Tracking OCP over ``tau_ref`` (``N + 1`` rows) with the Table-2 boxes.

    The initial state is fixed, so state boxes apply from stage 1 on; the
    jerk box applies to every control.
    """

    theta_free_constraints = True

    def __init__(self, tau_ref, x_init=None, dt=DT, wheelbase=WHEELBASE):
        tau_ref = np.asarray(tau_ref, dtype=np.float64)
        super().__init__(tau_ref.shape[0] - 1, NX, NU, N_THETA, x_init)
        self.tau_ref = tau_ref
        self.dt = float(dt)
        self.wheelbase = float(wheelbase)

    def _parts(self, k, xi_k, theta):
        w, D, alpha = split_theta(theta)
        x = xi_k[:NX]
        u = xi_k[NX:] if k < self.N else None
        return w, D, alpha, x, u

    def residual(self, k, xi_k, theta):
        w, D, alpha, x, u = self._parts(k, xi_k, theta)
        sw = np.sqrt(np.maximum(w, 0.0))
        err = features(x, u, D, alpha) - self.tau_ref[k]
        Jx, Jp = _feature_jacobians(x, D, alpha)
        n = xi_k.shape[0]
        Jx = Jx[:, :n]
        J = sw[:, None] * Jx
        Jt = np.zeros((N_FEATURES, N_THETA))
        Jt[:, :N_FEATURES] = np.diag(0.5 * err / np.maximum(sw, 1e-300))
        Jt[:, N_FEATURES:] = sw[:, None] * Jp
        phi = sw * err
        if k < self.N:
            r = math.sqrt(STEER_ACCEL_WEIGHT)
            phi = np.append(phi, r * u[1])
            row = np.zeros(n)
            row[NX + 1] = r
            J = np.vstack([J, row])
            Jt = np.vstack([Jt, np.zeros(N_THETA)])
        else:
            # the terminal stage has no jerk feature
            keep = np.arange(N_FEATURES) != 6
            phi, J, Jt = phi[keep], J[keep], Jt[keep]
        return phi, J, Jt

    def cost_cross(self, k, xi_k, theta):
        """Exact ``d/d theta`` of the stage-cost gradient."""
        w, D, alpha, x, u = self._parts(k, xi_k, theta)
        n = xi_k.shape[0]
        err = features(x, u, D, alpha) - self.tau_ref[k]
        if k == self.N:
            err[6] = 0.0
        Jx, Jp = _feature_jacobians(x, D, alpha)
        Jx = Jx[:, :n]
        dD, da = _feature_second(x, D, alpha)
        out = np.zeros((n, N_THETA))
        out[:, :N_FEATURES] = Jx.T * err
        for i in range(2):
            out[:, N_FEATURES] += w[i] * (Jp[i, 0] * Jx[i] + err[i] * dD[i, :n])
            out[:, N_FEATURES + 1] += w[i] * (Jp[i, 1] * Jx[i] + err[i] * da[i, :n])
        return out

    def dynamics(self, k, x, u, theta):
        f = vehicle_step(x, u, self.dt, self.wheelbase)
        Fx, Fu = vehicle_jacobians(x, u, self.dt, self.wheelbase)
        return f, Fx, Fu, np.zeros((NX, N_THETA))

    def inequality(self, k, xi_k, theta):
        n = xi_k.shape[0]
        rows, vals = [], []
        if k > 0:
            for i in _BOXED:
                for sgn, bound in ((1.0, STATE_UPPER[i]), (-1.0, -STATE_LOWER[i])):
                    r = np.zeros(n)
                    r[i] = sgn
                    rows.append(r)
                    vals.append(sgn * xi_k[i] - bound)
        if k < self.N:
            for sgn in (1.0, -1.0):
                r = np.zeros(n)
                r[NX] = sgn
                rows.append(r)
                vals.append(sgn * xi_k[NX] - JERK_MAX)
        if not rows:
            return super().inequality(k, xi_k, theta)
        G = np.array(rows)
        return np.array(vals), G, np.zeros((G.shape[0], N_THETA))


# ---------------------------------------------------------------------------
# demonstrations


@dataclass
class Demonstration:
    scenario: str
    dt: float
    states: np.ndarray
    controls: np.ndarray
    tau_ref: np.ndarray

    def to_json(self, path):
        data = {
            "scenario": self.scenario,
            "dt": self.dt,
            "states": self.states.tolist(),
            "controls": self.controls.tolist(),
            "tau_ref": self.tau_ref.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(data, fh)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        missing = {"scenario", "dt", "states", "controls", "tau_ref"} - set(data)
        if missing:
            raise ValueError(f"demonstration file lacks {sorted(missing)}")
        return cls(
            data["scenario"],
            float(data["dt"]),
            np.asarray(data["states"], dtype=np.float64).reshape(-1, NX),
            np.asarray(data["controls"], dtype=np.float64).reshape(-1, NU),
            np.asarray(data["tau_ref"], dtype=np.float64).reshape(-1, N_FEATURES),
        )

    def segments(self, horizon=HORIZON):
        """``(start, tau_ref rows, demo xi)`` for each full planning segment."""
        out = []
        T = self.controls.shape[0]
        for start in range(0, T - horizon + 1, horizon):
            xs = self.states[start:start + horizon + 1]
            us = self.controls[start:start + horizon]
            if xs.shape[0] < horizon + 1:
                break
            xi = np.concatenate([np.concatenate([xs[k], us[k]]) for k in range(horizon)] + [xs[horizon]])
            out.append((start, self.tau_ref[start:start + horizon + 1], xi))
        return out


def initial_state(ref: Reference):
    return ref.states[0].copy()


def generate_demo(theta_star=DEFAULT_THETA_STAR, scenario="straight", noise_std=0.0, seed=0,
                  steps=None, settings: SqpSettings = SqpSettings()) -> Demonstration:
    """Closed-loop rollout of the planner at ``theta_star``.

    Every plan covers ``HORIZON`` steps and is executed in full before the
    next plan starts from the state it reached. Logged states and controls
    get i.i.d. Gaussian noise of standard deviation ``noise_std``.
    """
    if scenario not in DEMO_STEPS:
        raise ValueError(f"unknown scenario {scenario!r}")
    steps = DEMO_STEPS[scenario] if steps is None else int(steps)
    theta_star = project_theta(theta_star)
    ref = build_reference(scenario, DT, steps + HORIZON + 1)
    x = initial_state(ref)
    states, controls = [x], []
    xi_guess, mask = None, None
    for start in range(0, steps, HORIZON):
        ocp = VehicleOcp(ref.tau[start:start + HORIZON + 1], x)
        sol = solve_ocp(ocp, theta_star, x, settings, xi0=xi_guess, active0=mask)
        xs, us = ocp.unstack_xi(sol.xi)
        for k in range(HORIZON):
            if len(controls) == steps:
                break
            controls.append(us[k])
            states.append(xs[k + 1])
        x = xs[HORIZON]
        xi_guess, mask = _shifted_guess(ocp, sol, x, theta_star), None
    states = np.array(states[:steps])
    controls = np.array(controls[:steps])
    if noise_std > 0.0:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        states = states + noise_std * rng.standard_normal(states.shape)
        controls = controls + noise_std * rng.standard_normal(controls.shape)
    return Demonstration(scenario, DT, states, controls, ref.tau[:steps].copy())


def _shifted_guess(ocp, sol, x, theta):
    """Warm start for the next segment: coast from ``x`` with zero controls."""
    return ocp.rollout(x, np.zeros((ocp.N, ocp.nu)), theta)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingConfig:
    scenario: str = "straight"
    max_iter: Optional[int] = None
    learning_rate: Optional[float] = None
    dt: float = DT
    wheelbase: float = WHEELBASE
    theta_init: np.ndarray = field(default_factory=lambda: THETA_INIT.copy())
    hessian_mode: str = "gauss_newton"

    def __post_init__(self):
        if self.scenario not in TABLE_SETTINGS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        iters, lr = TABLE_SETTINGS[self.scenario]
        if self.max_iter is None:
            self.max_iter = iters
        if self.learning_rate is None:
            self.learning_rate = lr
        if int(self.max_iter) != self.max_iter or self.max_iter < 0:
            raise ValueError("max_iter must be a nonnegative integer")
        if not self.learning_rate >= 0.0:
            raise ValueError("learning_rate must be nonnegative")
        self.theta_init = np.asarray(self.theta_init, dtype=np.float64)


@dataclass
class StepResult:
    loss: float
    grad: np.ndarray
    theta: np.ndarray
    build_ns: int
    solve_ns: int
    solutions: list


def imitation_step(theta, demo: Demonstration, learning_rate=0.0, hessian_mode="gauss_newton",
                   warm=None, settings: SqpSettings = SqpSettings(), horizon=HORIZON) -> StepResult:
    """Loss, gradient and one projected descent step over all demo segments.

    ``L = sum_segments |xi(theta) - xi_demo|^2``; each segment is solved from
    the demonstrated segment start, and its trajectory derivatives come from
    :func:`fastdoc_backward` on the assembled system (the block-LU pass under
    ``hessian_mode="exact_fd"``). ``warm`` holds the
    previous solutions per segment for warm starts.
    """
    theta = np.asarray(theta, dtype=np.float64)
    loss = 0.0
    grad = np.zeros(N_THETA)
    build = solve = 0
    sols = []
    for j, (start, tau, xi_demo) in enumerate(demo.segments(horizon)):
        x0 = xi_demo[:NX]
        ocp = VehicleOcp(tau, x0, demo.dt)
        prev = warm[j] if warm is not None and j < len(warm) else None
        sol = _solve_segment(ocp, theta, x0, settings, prev)
        sols.append(sol)
        diff = sol.xi - xi_demo
        loss += float(diff @ diff)
        t0 = time.perf_counter_ns()
        system = assemble_dkkt(ocp, sol, theta, hessian_mode=hessian_mode)
        t1 = time.perf_counter_ns()
        # exact Lagrangian Hessian blocks can be indefinite, which rules out Cholesky
        der = fastdoc_backward(system, workers=1) if hessian_mode == "gauss_newton" else blocklu_backward(system, workers=1)
        t2 = time.perf_counter_ns()
        build += t1 - t0
        solve += t2 - t1
        grad += 2.0 * diff @ der.dxi_dtheta
    if not np.all(np.isfinite(grad)):
        raise GradientNonFinite("imitation gradient has non-finite entries")
    new = project_theta(theta - learning_rate * grad) if learning_rate > 0 else theta.copy()
    return StepResult(loss, grad, new, build, solve, sols)


def _solve_segment(ocp, theta, x0, settings, prev: Optional[SolvedTrajectory]):
    if prev is not None:
        try:
            return solve_ocp(ocp, theta, x0, settings, xi0=prev.xi, active0=prev.active_mask)
        except FastDocError:
            pass
    return solve_ocp(ocp, theta, x0, settings)


@dataclass
class TrainingLog:
    losses: list = field(default_factory=list)
    build_ns: list = field(default_factory=list)
    solve_ns: list = field(default_factory=list)
    thetas: dict = field(default_factory=dict)
    theta: Optional[np.ndarray] = None
    failures: int = 0

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "loss", "build_ns", "solve_ns", "theta_json"])
            for i, loss in enumerate(self.losses):
                th = self.thetas.get(i)
                wr.writerow([
                    i,
                    repr(float(loss)),
                    self.build_ns[i] if i < len(self.build_ns) else "",
                    self.solve_ns[i] if i < len(self.solve_ns) else "",
                    "" if th is None else json.dumps([float(v) for v in th]),
                ])


def train(config: TrainingConfig, demo: Demonstration, settings: SqpSettings = SqpSettings(),
          callback=None) -> TrainingLog:
    """Projected gradient descent on the imitation loss.

    Row ``i`` of the log holds the loss at the ``i``-th iterate, so a run
    with ``max_iter`` steps has ``max_iter + 1`` losses; timings of the
    backward pass are recorded for every evaluated iterate. A failed step
    keeps theta and halves the step size for that iteration only; five
    consecutive failures raise :class:`TrainingAborted`.
    """
    theta = project_theta(config.theta_init)
    log = TrainingLog()
    warm = None
    fails = 0
    it = 0
    while True:
        try:
            lr = config.learning_rate if it < config.max_iter else 0.0
            res = imitation_step(theta, demo, lr * (0.5 ** fails), config.hessian_mode, warm, settings)
        except FastDocError as err:
            fails += 1
            log.failures += 1
            if fails >= MAX_FAILURES:
                raise TrainingAborted(f"{fails} consecutive failed steps at iteration {it}: {err}") from err
            continue
        fails = 0
        log.losses.append(res.loss)
        log.build_ns.append(res.build_ns)
        log.solve_ns.append(res.solve_ns)
        if it % 10 == 0 or it == config.max_iter:
            log.thetas[it] = theta.copy()
        if callback is not None:
            callback(it, res)
        if it == config.max_iter:
            break
        warm = res.solutions
        theta = res.theta
        it += 1
    log.theta = theta
    return log


def compare_build_modes(theta, demo: Demonstration, iterations=50, learning_rate=None,
                        settings: SqpSettings = SqpSettings()):
    """Build-stage times of both Hessian modes on the same training iterates.

    Runs ``iterations`` Gauss-Newton training steps and, at every iterate,
    also times the finite-difference assembly of each segment. Returns two
    arrays of per-iteration nanoseconds ``(gauss_newton, exact_fd)``.
    """
    lr = TABLE_SETTINGS[demo.scenario][1] if learning_rate is None else learning_rate
    theta = project_theta(theta)
    gn, fd = [], []
    warm = None
    for _ in range(iterations):
        res = imitation_step(theta, demo, lr, "gauss_newton", warm, settings)
        t = 0
        for sol, (_, tau, xi_demo) in zip(res.solutions, demo.segments()):
            ocp = VehicleOcp(tau, xi_demo[:NX], demo.dt)
            t0 = time.perf_counter_ns()
            assemble_dkkt(ocp, sol, theta, hessian_mode="exact_fd")
            t += time.perf_counter_ns() - t0
        gn.append(res.build_ns)
        fd.append(t)
        warm = res.solutions
        theta = res.theta
    return np.array(gn), np.array(fd)


def config_dict(config: TrainingConfig):
    d = asdict(config)
    d["theta_init"] = [float(v) for v in config.theta_init]
    return d


__all__ = [
    "vehicle_step",
    "vehicle_jacobians",
    "lookahead_point",
    "features",
    "stage_cost_residual",
    "project_theta",
    "build_reference",
    "Reference",
    "VehicleOcp",
    "Demonstration",
    "generate_demo",
    "TrainingConfig",
    "imitation_step",
    "train",
    "TrainingLog",
    "compare_build_modes",
    "DEFAULT_THETA_STAR",
    "THETA_INIT",
]
