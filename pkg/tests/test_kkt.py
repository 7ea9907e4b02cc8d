import numpy as np
import pytest
from hypothesis import given, strategies as st

from fastdoc.deriv import blocklu_backward, fastdoc_backward
from fastdoc.forward import solve_ocp
from fastdoc.kkt import (
    OcpDefinition,
    SolvedTrajectory,
    assemble_dkkt,
    check_ocp_derivatives,
    detect_active_set,
    gauss_newton_hessian,
    kkt_residual,
    kkt_residual_parts,
    load_instance,
    save_instance,
)
from fastdoc.exceptions import DerivativeCheckError
from fastdoc.testproblems import ScalarShiftOcp, random_lq_ocp
from fastdoc.vehicle import HORIZON, NX, VehicleOcp, build_reference, features, DEFAULT_THETA_STAR


def test_detect_active_set_examples():
    assert detect_active_set([[-1e-9, -0.5]], 1e-6)[0].tolist() == [True, False]
    assert detect_active_set([[0.0]], 1e-6)[0].tolist() == [True]
    assert detect_active_set([[-2e-6, -5e-7]], 1e-6)[0].tolist() == [False, True]


class SquareResidual(OcpDefinition):
    """``phi = [xi_1^2]`` on the terminal state only."""

    theta_free_constraints = True

    def __init__(self):
        super().__init__(1, 1, 1, 1, np.zeros(1))

    def residual(self, k, xi_k, theta):
        n = xi_k.shape[0]
        if k < self.N:
            return np.zeros(0), np.zeros((0, n)), np.zeros((0, 1))
        return np.array([xi_k[0] ** 2]), np.array([[2 * xi_k[0]]]), np.zeros((1, 1))

    def dynamics(self, k, x, u, theta):
        return x + u, np.eye(1), np.eye(1), np.zeros((1, 1))


def test_gauss_newton_examples():
    ocp = SquareResidual()
    traj = SolvedTrajectory(np.array([0.0, 3.0, 3.0]), np.zeros(2), (np.zeros(0, bool),) * 2, 0.0)
    H = gauss_newton_hessian(ocp, traj, np.zeros(1))
    np.testing.assert_allclose(H[1], [[36.0]])
    np.testing.assert_array_equal(H[0], np.zeros((2, 2)))


def test_gauss_newton_linear_residual_gives_weight():
    ocp = random_lq_ocp(3, 2, 1, 2, seed=3)
    traj = solve_ocp(ocp, np.zeros(2))
    H = gauss_newton_hessian(ocp, traj, np.zeros(2))
    for k in range(4):
        np.testing.assert_allclose(H[k], ocp.W_sqrt[k] @ ocp.W_sqrt[k], atol=1e-14)


def test_scalar_structure():
    ocp = ScalarShiftOcp()
    traj = solve_ocp(ocp, np.zeros(1))
    sys = assemble_dkkt(ocp, traj, np.zeros(1))
    A = sys.A_dense()
    np.testing.assert_array_equal(A, [[1.0, 0.0, 0.0], [1.0, 1.0, -1.0]])
    assert sys.row_dims == [1, 1, 0]


def test_gn_equals_exact_on_lq():
    ocp = random_lq_ocp(4, 3, 2, 2, seed=5, u_max=0.3)
    theta = np.array([0.2, -0.4])
    traj = solve_ocp(ocp, theta)
    gn = assemble_dkkt(ocp, traj, theta)
    ex = assemble_dkkt(ocp, traj, theta, hessian_mode="exact_fd")
    for a, b in zip(gn.H.blocks, ex.H.blocks):
        np.testing.assert_allclose(a, b, atol=1e-6)


def _small_residual_vehicle():
    """Vehicle OCP whose reference is the feature sequence of a feasible rollout."""
    ref = build_reference("curve", 0.1, HORIZON + 1)
    theta = DEFAULT_THETA_STAR
    ocp = VehicleOcp(ref.tau, ref.states[0])
    xi = ocp.rollout(ref.states[0], np.tile([0.1, 0.05], (HORIZON, 1)), theta)
    states, controls = ocp.unstack_xi(xi)
    w, D, alpha = theta[:8], theta[8], theta[9]
    tau = [features(states[k], controls[k] if k < HORIZON else None, D, alpha) for k in range(HORIZON + 1)]
    tau = np.array(tau)
    return VehicleOcp(tau, ref.states[0]), theta


def test_vehicle_gn_and_exact_agree_small_residual():
    ocp, theta = _small_residual_vehicle()
    traj = solve_ocp(ocp, theta)
    gn = assemble_dkkt(ocp, traj, theta)
    ex = assemble_dkkt(ocp, traj, theta, hessian_mode="exact_fd")
    assert any(np.linalg.norm(a - b) > 0 for a, b in zip(gn.H.blocks, ex.H.blocks))
    a = fastdoc_backward(gn).dxi_dtheta
    b = blocklu_backward(ex).dxi_dtheta
    assert np.max(np.abs(a - b)) <= 5e-3 * np.max(np.abs(b))


def test_gn_hessian_psd():
    ref = build_reference("curve", 0.1, 6)
    ocp = VehicleOcp(ref.tau, ref.states[0])
    traj = solve_ocp(ocp, DEFAULT_THETA_STAR)
    for h in gauss_newton_hessian(ocp, traj, DEFAULT_THETA_STAR).blocks:
        assert np.min(np.linalg.eigvalsh(h)) >= -1e-10 * np.linalg.norm(h)


def test_dynamics_rows_vanish_on_linearized_perturbation():
    ocp = random_lq_ocp(5, 3, 2, 2, seed=11)
    theta = np.zeros(2)
    traj = solve_ocp(ocp, theta)
    sys = assemble_dkkt(ocp, traj, theta)
    rng = np.random.default_rng(0)
    dx = [np.zeros(3)]
    dxi = []
    for k in range(5):
        du = rng.standard_normal(2)
        dxi.append(np.concatenate([dx[-1], du]))
        dx.append(ocp.Fx[k] @ dx[-1] + ocp.Fu[k] @ du)
    dxi.append(dx[-1])
    r = sys.A_dense() @ np.concatenate(dxi)
    np.testing.assert_allclose(r, 0.0, atol=1e-12)


def test_assembly_deterministic():
    ocp = random_lq_ocp(4, 2, 1, 2, seed=2, u_max=0.2)
    theta = np.array([0.1, 0.3])
    traj = solve_ocp(ocp, theta)
    a = assemble_dkkt(ocp, traj, theta)
    b = assemble_dkkt(ocp, traj, theta)
    for x, y in zip(a.H.blocks + a.B + a.C, b.H.blocks + b.B + b.C):
        assert np.array_equal(x, y)


def test_kkt_residual_at_optimum_and_perturbed():
    ocp = ScalarShiftOcp()
    traj = solve_ocp(ocp, np.zeros(1))
    assert kkt_residual(ocp, traj, np.zeros(1)) <= 1e-10
    res = []
    for h in (1e-5, 1e-4, 1e-3):
        xi = traj.xi.copy()
        xi[1] += h
        res.append(kkt_residual(ocp, SolvedTrajectory(xi, traj.lam, traj.active_mask, 0.0, x_init=traj.x_init), np.zeros(1)))
    slope = np.polyfit(np.log([1e-5, 1e-4, 1e-3]), np.log(res), 1)[0]
    assert abs(slope - 1.0) < 0.05


def test_feasible_non_stationary_point():
    ocp = random_lq_ocp(3, 2, 1, 1, seed=4)
    theta = np.zeros(1)
    xi = ocp.rollout(ocp.x_init, np.ones((3, 1)), theta)
    sol = solve_ocp(ocp, theta)
    traj = SolvedTrajectory(xi, np.zeros_like(sol.lam), sol.active_mask, 0.0, x_init=ocp.x_init)
    stat, prim = kkt_residual_parts(ocp, traj, theta)
    assert prim <= 1e-10
    assert stat > 0


def test_jacobian_callbacks_match_fd():
    ocp = random_lq_ocp(3, 2, 2, 3, seed=8, u_max=1.0)
    assert check_ocp_derivatives(ocp, np.array([0.1, -0.2, 0.3]), n_points=10) < 1e-4
    ref = build_reference("curve", 0.1, 6)
    veh = VehicleOcp(ref.tau, ref.states[0])
    xi = veh.rollout(ref.states[0], np.zeros((5, 2)), DEFAULT_THETA_STAR)
    assert check_ocp_derivatives(veh, DEFAULT_THETA_STAR, xi=xi, n_points=10) < 1e-4


def test_derivative_check_catches_wrong_jacobian():
    class Wrong(ScalarShiftOcp):
        def dynamics(self, k, x, u, theta):
            f, fx, fu, ft = super().dynamics(k, x, u, theta)
            return f, 2 * fx, fu, ft

    with pytest.raises(DerivativeCheckError):
        check_ocp_derivatives(Wrong(), np.zeros(1))


def test_instance_roundtrip(tmp_path):
    ocp = random_lq_ocp(3, 2, 1, 2, seed=1, u_max=0.2)
    theta = np.array([0.3, 0.1])
    traj = solve_ocp(ocp, theta)
    sys = assemble_dkkt(ocp, traj, theta)
    path = tmp_path / "inst.json"
    save_instance(path, sys, traj, {"N": 3, "nx": 2, "nu": 1, "ntheta": 2}, theta, ocp.x_init)
    doc = load_instance(path)
    assert set(["dims", "theta", "x_init", "xi", "lambda", "active_mask", "blocks"]) <= set(doc)
    for a, b in zip(sys.H.blocks + sys.A_diag + sys.A_super + sys.B + sys.C,
                    doc["system"].H.blocks + doc["system"].A_diag + doc["system"].A_super
                    + doc["system"].B + doc["system"].C):
        assert np.array_equal(a, b)
    assert np.array_equal(doc["traj"].xi, traj.xi)


@given(seed=st.integers(0, 2**31), N=st.integers(1, 5))
def test_row_dims_match_lambda(seed, N):
    ocp = random_lq_ocp(N, 2, 1, 2, seed=seed, u_max=0.5)
    theta = np.zeros(2)
    traj = solve_ocp(ocp, theta)
    sys = assemble_dkkt(ocp, traj, theta)
    assert sum(sys.row_dims) == traj.lam.shape[0]
    assert traj.xi.shape[0] == N * 3 + 2
