import numpy as np
import pytest
from hypothesis import given, strategies as st

from fastdoc.bench import gen_synthetic, rel_error
from fastdoc.blockla import BlockDiagMatrix, blocktridiag_schur_blocks_psd_check
from fastdoc.deriv import (
    blocklu_backward,
    dense_backward,
    fastdoc_backward,
    runtime_report,
    saddle_residuals,
    schur_system,
    RuntimeBreakdown,
)
from fastdoc.exceptions import EmptyInput, SingularSystem
from fastdoc.forward import solve_ocp
from fastdoc.kkt import DiffKktSystem, assemble_dkkt
from fastdoc.testproblems import ScalarShiftOcp


def test_zero_rhs_gives_zero():
    s = gen_synthetic(5, 4, 1, 3, seed=1)
    z = DiffKktSystem(s.H, s.A_diag, s.A_super, tuple(np.zeros_like(b) for b in s.B), tuple(np.zeros_like(c) for c in s.C))
    out = fastdoc_backward(z)
    assert not out.dxi_dtheta.any()
    assert not out.dlambda_dtheta.any()


def test_matches_dense_base_instance():
    s = gen_synthetic(20, 8, 2, 10, seed=0)
    assert rel_error(fastdoc_backward(s), dense_backward(s)) < 1e-6


def test_scalar_problem_matches_resolve():
    ocp = ScalarShiftOcp(x_init=1.0)
    der = {}
    for t in (1e-5, -1e-5):
        der[t] = solve_ocp(ocp, np.array([t])).xi
    fd = (der[1e-5] - der[-1e-5]) / 2e-5
    traj = solve_ocp(ocp, np.zeros(1))
    out = fastdoc_backward(assemble_dkkt(ocp, traj, np.zeros(1)))
    np.testing.assert_allclose(out.dxi_dtheta[:, 0], fd, atol=1e-8)
    np.testing.assert_allclose(out.dxi_dtheta[2, 0], 0.5, atol=1e-12)


def _bordered():
    """Scalar ``x_0, u_0, x_1`` with identity ``H``, an initial-state row and one dynamics row."""
    H = BlockDiagMatrix((np.eye(2), np.zeros((1, 1)) + 1.0))
    A_diag = (np.array([[1.0, 1.0]]), np.zeros((0, 1)))
    A_super = (np.array([[1.0, 0.0]]), np.array([[-1.0]]))
    B = (np.zeros((2, 1)), np.zeros((1, 1)))
    C = (np.ones((1, 1)), np.zeros((1, 1)), np.zeros((0, 1)))
    return DiffKktSystem(H, A_diag, A_super, B, C)


def test_dense_hand_elimination():
    s = _bordered()
    out = dense_backward(s)
    H, A, B, C = s.to_dense()
    # x0 = -1 from the first row, x0 + u0 - x1 = 0, minimize |xi|^2 / 2
    K = np.block([[H, A.T], [A, np.zeros((2, 2))]])
    ref = np.linalg.solve(K, -np.vstack([B, C]))
    np.testing.assert_allclose(out.dxi_dtheta, ref[:3], atol=1e-14)
    np.testing.assert_allclose(out.dlambda_dtheta, -ref[3:], atol=1e-14)
    np.testing.assert_allclose(out.dxi_dtheta[:, 0], [-1.0, 0.5, -0.5], atol=1e-14)


def test_dense_singular_duplicate_row():
    s = gen_synthetic(2, 3, 2, 2, seed=4)
    A_diag = list(s.A_diag)
    A_diag[-1] = np.vstack([A_diag[-1], A_diag[-1][:1]])
    C = list(s.C)
    C[-1] = np.vstack([C[-1], C[-1][:1]])
    bad = DiffKktSystem(s.H, tuple(A_diag), s.A_super, s.B, tuple(C))
    with pytest.raises(SingularSystem):
        dense_backward(bad)


@given(seed=st.integers(0, 2**31), N=st.integers(1, 15), n=st.integers(1, 10), d=st.integers(1, 6))
def test_three_solvers_agree(seed, N, n, d):
    s = gen_synthetic(N, n, max(1, -(-n // 4)), d, seed=seed)
    ref = dense_backward(s)
    a = fastdoc_backward(s)
    b = blocklu_backward(s)
    assert rel_error(a, ref) < 1e-6
    assert rel_error(b, ref) < 1e-6
    assert rel_error(a, b) < 1e-6


@given(seed=st.integers(0, 2**31), N=st.integers(1, 20), n=st.integers(1, 12))
def test_saddle_residual(seed, N, n):
    s = gen_synthetic(N, n, max(1, -(-n // 4)), 4, seed=seed)
    out = fastdoc_backward(s)
    r1, r2 = saddle_residuals(s, out)
    bn = max(np.max(np.abs(b)) for b in s.B)
    cn = max(np.max(np.abs(c)) for c in s.C if c.size)
    assert r1 <= 1e-6 * (1 + bn)
    assert r2 <= 1e-6 * (1 + cn)
    assert np.all(np.isfinite(out.dxi_dtheta))
    assert out.dxi_dtheta.shape == (sum(s.xi_dims), 4)
    assert out.dlambda_dtheta.shape == (sum(s.row_dims), 4)


def test_breakdown_accounting():
    s = gen_synthetic(30, 8, 2, 5, seed=2)
    for solver in (fastdoc_backward, blocklu_backward):
        br = solver(s).breakdown
        assert all(t >= 0 for t in br.steps)
        assert sum(br.steps) + br.refinement <= br.total


def test_identity_chain_same_structure():
    N, n = 3, 2
    H = BlockDiagMatrix(tuple(np.eye(2 * n) for _ in range(N)) + (np.eye(n),))
    A_super = [np.hstack([np.eye(n), np.zeros((n, n))])]
    A_diag = []
    for k in range(N + 1):
        if k < N:
            A_diag.append(np.hstack([np.eye(n), np.eye(n)]))
            sup = np.zeros((n, 2 * n if k + 1 < N else n))
            sup[:, :n] = -np.eye(n)
            A_super.append(sup)
        else:
            A_diag.append(np.zeros((0, n)))
    B = tuple(np.ones((h.shape[0], 2)) for h in H.blocks)
    C = tuple(np.ones((a.shape[0], 2)) for a in A_super) + (np.zeros((0, 2)),)
    s = DiffKktSystem(H, tuple(A_diag), tuple(A_super), B, C)
    a, b = fastdoc_backward(s), blocklu_backward(s)
    assert len(a.breakdown.steps) == len(b.breakdown.steps) == 4
    assert rel_error(a, b) < 1e-12


def test_runtime_report_examples():
    one = RuntimeBreakdown(5675, 572, 3356, 398, 10001)
    rep = runtime_report([one])
    np.testing.assert_allclose(list(rep.values()), [56.75, 5.72, 33.56, 3.98], atol=0.01)
    assert runtime_report([one, one]) == rep
    assert abs(sum(rep.values()) - 100) < 0.1
    with pytest.raises(EmptyInput):
        runtime_report([])


def test_schur_blocks_psd():
    s = gen_synthetic(15, 6, 2, 3, seed=9)
    S, _ = schur_system(s)
    norm = np.linalg.norm(S.to_dense())
    assert min(blocktridiag_schur_blocks_psd_check(S)) >= -1e-8 * norm


def test_schur_matches_dense_formula():
    s = gen_synthetic(4, 3, 1, 2, seed=3)
    S, gam = schur_system(s)
    H, A, B, C = s.to_dense()
    Hinv = np.linalg.inv(H)
    np.testing.assert_allclose(S.to_dense(), A @ Hinv @ A.T, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(np.vstack(gam), A @ Hinv @ B - C, rtol=1e-10, atol=1e-10)
