import numpy as np
import pytest
from hypothesis import given, strategies as st

from fastdoc.deriv import fastdoc_backward
from fastdoc.exceptions import ActiveSetChanged, MaxIterations
from fastdoc.forward import SqpSettings, _merit_terms, fd_sensitivity_oracle, solve_ocp
from fastdoc.kkt import assemble_dkkt, kkt_residual
from fastdoc.testproblems import ScalarShiftOcp, random_lq_ocp
from fastdoc.vehicle import (
    DEFAULT_THETA_STAR,
    STATE_LOWER,
    STATE_UPPER,
    V_MAX,
    JERK_MAX,
    VehicleOcp,
    build_reference,
)


def test_settings_validation():
    with pytest.raises(ValueError):
        SqpSettings(backtrack=1.0)
    with pytest.raises(ValueError):
        SqpSettings(kkt_tol=0.0)
    with pytest.raises(ValueError):
        SqpSettings(max_iter=0)


def test_lq_single_iteration():
    ocp = random_lq_ocp(6, 3, 2, 2, seed=0, equality_rows=1)
    sol = solve_ocp(ocp, np.array([0.3, -0.2]))
    assert sol.iterations == 1
    assert sol.kkt_residual <= 1e-8


def test_vehicle_straight_converges():
    ref = build_reference("straight", 0.1, 6)
    ocp = VehicleOcp(ref.tau, ref.states[0])
    sol = solve_ocp(ocp, DEFAULT_THETA_STAR, settings=SqpSettings(max_iter=30))
    assert sol.kkt_residual <= 1e-8
    assert kkt_residual(ocp, sol, DEFAULT_THETA_STAR) <= 1e-8


def test_speed_bound_becomes_active():
    ref = build_reference("straight", 0.1, 6)
    tau = ref.tau.copy()
    tau[:, 3] = 12.0
    x0 = ref.states[0].copy()
    x0[3] = V_MAX - 0.3
    x0[4] = 0.0
    ocp = VehicleOcp(tau, x0)
    theta = DEFAULT_THETA_STAR.copy()
    theta[3] = 50.0
    sol = solve_ocp(ocp, theta)
    states, _ = ocp.unstack_xi(sol.xi)
    assert np.any(np.abs(states[1:, 3] - V_MAX) <= 1e-8)
    # speed upper bound is the first row at every stage k >= 1
    lam_blocks = _ineq_lams(ocp, sol, theta)
    assert all(np.all(l >= -1e-8) for l in lam_blocks)
    assert sum(int(m[0]) for m in sol.active_mask[1:]) >= 1


def _ineq_lams(ocp, sol, theta):
    out, o = [], ocp.nx
    for k, m in enumerate(sol.active_mask):
        na = int(m.sum())
        out.append(sol.lam[o:o + na])
        o += na + (ocp.nx if k < ocp.N else 0)
    return out


def test_returned_trajectories_feasible():
    ref = build_reference("curve", 0.1, 11)
    ocp = VehicleOcp(ref.tau, ref.states[0])
    sol = solve_ocp(ocp, DEFAULT_THETA_STAR)
    states, controls = ocp.unstack_xi(sol.xi)
    rolled = ocp.unstack_xi(ocp.rollout(ref.states[0], controls, DEFAULT_THETA_STAR))[0]
    assert np.max(np.abs(rolled - states)) <= 1e-8
    assert np.all(states[1:] <= STATE_UPPER + 1e-8)
    assert np.all(states[1:] >= STATE_LOWER - 1e-8)
    assert np.all(np.abs(controls[:, 0]) <= JERK_MAX + 1e-8)


@given(seed=st.integers(0, 2**31), u_max=st.floats(0.05, 2.0))
def test_boxed_lq_properties(seed, u_max):
    ocp = random_lq_ocp(5, 2, 2, 2, seed=seed, u_max=u_max)
    theta = np.random.default_rng(seed).uniform(-1, 1, 2)
    sol = solve_ocp(ocp, theta)
    assert sol.kkt_residual <= 1e-8
    _, u = ocp.unstack_xi(sol.xi)
    assert np.all(np.abs(u) <= u_max + 1e-8)
    lams = _ineq_lams(ocp, sol, theta)
    assert all(np.all(l >= -1e-8) for l in lams)


def test_solution_improves_on_feasible_guess():
    ref = build_reference("curve", 0.1, 6)
    ocp = VehicleOcp(ref.tau, ref.states[0])
    guess = ocp.rollout(ref.states[0], np.zeros((ocp.N, ocp.nu)), DEFAULT_THETA_STAR)
    c0, v0 = _merit_terms(ocp, guess, DEFAULT_THETA_STAR, ref.states[0])
    sol = solve_ocp(ocp, DEFAULT_THETA_STAR)
    c1, v1 = _merit_terms(ocp, sol.xi, DEFAULT_THETA_STAR, ref.states[0])
    assert v0 == 0.0 and v1 <= 1e-8
    assert c1 <= c0


def test_max_iterations():
    ref = build_reference("curve", 0.1, 6)
    ocp = VehicleOcp(ref.tau, ref.states[0])
    with pytest.raises(MaxIterations) as info:
        solve_ocp(ocp, DEFAULT_THETA_STAR, settings=SqpSettings(max_iter=1))
    assert info.value.residual > 0


class ThetaFree(ScalarShiftOcp):
    def dynamics(self, k, x, u, theta):
        return x + u, np.eye(1), np.eye(1), np.zeros((1, 1))


def test_fd_oracle_theta_free():
    assert not fd_sensitivity_oracle(ThetaFree(), np.zeros(1)).any()


def test_fd_oracle_scalar_matches_backward():
    ocp = ScalarShiftOcp(x_init=0.7)
    theta = np.array([0.2])
    fd = fd_sensitivity_oracle(ocp, theta)
    sol = solve_ocp(ocp, theta)
    der = fastdoc_backward(assemble_dkkt(ocp, sol, theta)).dxi_dtheta
    assert np.max(np.abs(der - fd)) <= 1e-4 * np.max(np.abs(fd))


class BoundedShift(ScalarShiftOcp):
    """Scalar shift problem with the box ``u_0 <= 0.25``."""

    def inequality(self, k, xi_k, theta):
        if k == self.N:
            return super().inequality(k, xi_k, theta)
        G = np.array([[0.0, 1.0]])
        return np.array([xi_k[1] - 0.25]), G, np.zeros((1, 1))


def test_fd_oracle_detects_boundary_crossing():
    # u_0 = -(x_0 + theta)/2 reaches 0.25 at theta = -1.5 for x_0 = 1
    ocp = BoundedShift(x_init=1.0)
    with pytest.raises(ActiveSetChanged):
        fd_sensitivity_oracle(ocp, np.array([-1.5 + 1e-7]), step=1e-5)
