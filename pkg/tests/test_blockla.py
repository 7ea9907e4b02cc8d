import numpy as np
import pytest
from hypothesis import given, strategies as st

from fastdoc.blockla import (
    BlockDiagMatrix,
    BlockTriDiagMatrix,
    RegPolicy,
    blockdiag_inverse,
    blocktridiag_schur_blocks_psd_check,
    blocktridiag_solve,
    cholesky_factor,
    cholesky_solve,
    flop_counter,
    lu_factor,
    lu_solve,
)
from fastdoc.exceptions import DimensionMismatch, NotPositiveDefinite

from conftest import spd


def test_cholesky_identity():
    f = cholesky_factor(np.eye(3))
    assert np.array_equal(f.lower, np.eye(3))
    assert f.regularization_used == 0.0


def test_cholesky_2x2_by_hand():
    f = cholesky_factor(np.array([[4.0, 2.0], [2.0, 5.0]]))
    np.testing.assert_allclose(f.lower, [[2.0, 0.0], [1.0, 2.0]], atol=1e-15)
    np.testing.assert_allclose(f.lower @ f.lower.T, [[4.0, 2.0], [2.0, 5.0]], atol=1e-14)


def test_cholesky_indefinite_without_policy():
    with pytest.raises(NotPositiveDefinite):
        cholesky_factor(np.array([[1.0, 2.0], [2.0, 1.0]]), RegPolicy.none())


def test_cholesky_singular_gets_shift():
    m = np.array([[1.0, 1.0], [1.0, 1.0]])
    f = cholesky_factor(m)
    assert f.regularization_used > 0
    rec = f.lower @ f.lower.T
    np.testing.assert_allclose(rec, m + f.regularization_used * np.eye(2), atol=1e-12)


def test_cholesky_solve_examples():
    np.testing.assert_allclose(cholesky_solve(cholesky_factor(np.eye(3)), np.arange(6.0).reshape(3, 2)),
                               np.arange(6.0).reshape(3, 2))
    x = cholesky_solve(cholesky_factor(np.array([[4.0, 2.0], [2.0, 5.0]])), np.array([[1.0], [0.0]]))
    np.testing.assert_allclose(x, [[5 / 16], [-1 / 8]], atol=1e-15)
    np.testing.assert_allclose(cholesky_solve(cholesky_factor(4 * np.eye(3)), np.eye(3)), 0.25 * np.eye(3))


def test_cholesky_solve_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        cholesky_solve(cholesky_factor(np.eye(3)), np.ones((2, 1)))


def test_lu_solve_matches_numpy(rng):
    m = rng.standard_normal((7, 7))
    rhs = rng.standard_normal((7, 3))
    np.testing.assert_allclose(lu_solve(lu_factor(m), rhs), np.linalg.solve(m, rhs), rtol=1e-10)


@given(n=st.integers(1, 12), seed=st.integers(0, 2**31), cond=st.sampled_from([1.0, 10.0, 1e3, 1e6]))
def test_cholesky_reconstruction(n, seed, cond):
    m = spd(np.random.default_rng(seed), n, cond)
    f = cholesky_factor(m)
    rec = f.lower @ f.lower.T
    assert np.all(np.diagonal(f.lower) > 0)
    assert np.allclose(np.triu(f.lower, 1), 0.0)
    assert np.linalg.norm(rec - (m + f.regularization_used * np.eye(n))) <= 1e-8 * np.linalg.norm(m)


def test_blockdiag_inverse_examples(rng):
    out = blockdiag_inverse(BlockDiagMatrix((np.eye(2), np.eye(3))))
    assert all(np.allclose(b, np.eye(b.shape[0])) for b in out.blocks)
    out = blockdiag_inverse(BlockDiagMatrix((2 * np.eye(4),)))
    np.testing.assert_allclose(out[0], 0.5 * np.eye(4))
    blocks = tuple(spd(rng, 8) for _ in range(5))
    out = blockdiag_inverse(BlockDiagMatrix(blocks))
    assert max(np.linalg.norm(h @ x - np.eye(8)) for h, x in zip(blocks, out.blocks)) < 1e-8


def test_blockdiag_inverse_tags_block():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPositiveDefinite) as info:
        blockdiag_inverse(BlockDiagMatrix((np.eye(2), bad)), RegPolicy.none())
    assert info.value.block == 1


def test_blockdiag_inverse_worker_independent(rng):
    blocks = tuple(spd(rng, 6) for _ in range(9))
    a = blockdiag_inverse(BlockDiagMatrix(blocks), workers=1)
    b = blockdiag_inverse(BlockDiagMatrix(blocks), workers=4)
    for x, y in zip(a.blocks, b.blocks):
        assert np.array_equal(x, y)


def random_tridiag(rng, M, side):
    """``S = A H^{-1} A^T`` with a banded full-rank ``A``, so ``S`` is PD block tridiagonal."""
    sizes = [side] * (M + 1)
    n = sum(sizes)
    A = np.zeros((n, n))
    o = np.concatenate([[0], np.cumsum(sizes)])
    for k in range(M + 1):
        A[o[k]:o[k + 1], o[k]:o[k + 1]] = rng.standard_normal((side, side)) + 3 * np.eye(side)
        if k < M:
            A[o[k]:o[k + 1], o[k + 1]:o[k + 2]] = 0.3 * rng.standard_normal((side, side))
    S = A @ A.T
    diag = tuple(S[o[k]:o[k + 1], o[k]:o[k + 1]] for k in range(M + 1))
    lower = tuple(S[o[k + 1]:o[k + 2], o[k]:o[k + 1]] for k in range(M))
    diag = tuple(0.5 * (q + q.T) for q in diag)
    return BlockTriDiagMatrix(diag, lower)


def test_tridiag_single_block(rng):
    q = spd(rng, 5)
    g = rng.standard_normal((5, 2))
    x = blocktridiag_solve(BlockTriDiagMatrix((q,), ()), [g])
    np.testing.assert_allclose(x[0], cholesky_solve(cholesky_factor(q), g), rtol=1e-12)


def test_tridiag_identity_chain(rng):
    S = BlockTriDiagMatrix(tuple(np.eye(3) for _ in range(4)), tuple(np.zeros((3, 3)) for _ in range(3)))
    g = [rng.standard_normal((3, 2)) for _ in range(4)]
    for x, y in zip(blocktridiag_solve(S, g), g):
        np.testing.assert_allclose(x, y)


def test_tridiag_dense_oracle(rng):
    S = random_tridiag(rng, 10, 6)
    g = [rng.standard_normal((6, 3)) for _ in range(11)]
    x = np.vstack(blocktridiag_solve(S, g))
    ref = np.linalg.solve(S.to_dense(), np.vstack(g))
    assert np.max(np.abs(x - ref)) <= 1e-9 * np.max(np.abs(ref))


@given(M=st.integers(0, 12), side=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_tridiag_matches_dense(M, side, seed):
    rng = np.random.default_rng(seed)
    S = random_tridiag(rng, M, side)
    g = [rng.standard_normal((side, 2)) for _ in range(M + 1)]
    x = np.vstack(blocktridiag_solve(S, g))
    ref = np.linalg.solve(S.to_dense(), np.vstack(g))
    assert np.max(np.abs(x - ref)) <= 1e-9 * max(1.0, np.max(np.abs(ref)))


def test_tridiag_lu_baseline_agrees(rng):
    S = random_tridiag(rng, 6, 4)
    g = [rng.standard_normal((4, 2)) for _ in range(7)]
    a = np.vstack(blocktridiag_solve(S, g))
    b = np.vstack(blocktridiag_solve(S, g, method="lu"))
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_tridiag_gamma_mismatch(rng):
    S = random_tridiag(rng, 2, 3)
    with pytest.raises(DimensionMismatch):
        blocktridiag_solve(S, [np.ones((3, 1))] * 2)


def test_psd_check_identity_chain():
    S = BlockTriDiagMatrix(tuple(np.eye(3) for _ in range(4)), tuple(np.zeros((3, 3)) for _ in range(3)))
    assert all(e >= 1 - 1e-12 for e in blocktridiag_schur_blocks_psd_check(S))


@given(M=st.integers(0, 10), side=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_psd_check_positive_on_full_rank(M, side, seed):
    S = random_tridiag(np.random.default_rng(seed), M, side)
    norm = np.linalg.norm(S.to_dense())
    assert min(blocktridiag_schur_blocks_psd_check(S)) >= -1e-8 * norm


def test_psd_check_flags_duplicate_row(rng):
    A = rng.standard_normal((6, 6))
    A[3] = A[2]
    S = A @ A.T
    diag = (S[:3, :3], S[3:, 3:])
    lower = (S[3:, :3],)
    est = blocktridiag_schur_blocks_psd_check(BlockTriDiagMatrix(diag, lower))
    assert min(est) <= 1e-8 * np.linalg.norm(S)


@pytest.mark.parametrize("n", [16, 32, 48])
def test_flop_counts(n, rng):
    m = spd(rng, n)
    with flop_counter() as c:
        cholesky_factor(m)
    assert abs(c.factor - n**3 / 3) <= 0.1 * n**3 / 3
    with flop_counter() as c:
        lu_factor(m)
    assert abs(c.factor - 2 * n**3 / 3) <= 0.1 * 2 * n**3 / 3
