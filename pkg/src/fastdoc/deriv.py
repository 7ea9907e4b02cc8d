"""Trajectory derivatives from a differential KKT system.

Three solvers share one calling convention:

* :func:`fastdoc_backward` eliminates the primal block with a blockwise
  Cholesky inverse of ``H``, forms the block tridiagonal Schur complement
  ``S = A H^{-1} A^T`` and right-hand side ``A H^{-1} B - C``, solves it with
  a Cholesky sweep and back-substitutes for the primal sensitivities.
* :func:`blocklu_backward` runs the same pipeline with partial-pivoting LU
  in place of every Cholesky factorization.
* :func:`dense_backward` factors the whole saddle-point matrix with LAPACK.
"""

from __future__ import annotations

import threading
import time
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from . import _kernels as K
from .blockla import (
    DEFAULT_POLICY,
    BlockTriDiagMatrix,
    PackedBlocks,
    RegPolicy,
    inverse_packed,
    tridiag_solve_packed,
)
from .exceptions import EmptyInput, NotPositiveDefinite, SingularSystem
from .kkt import DiffKktSystem

STEP_NAMES = ("step1_h_inverse", "step2_schur_build", "step3_schur_solve", "step4_backsub")
DENSE_RCOND_MIN = 1e-13
# refinement stops once a correction is this small relative to the solution
REFINE_RTOL = 1e-10
DEFAULT_REFINE = 3


@dataclass(frozen=True)
class RuntimeBreakdown:
    """Wall-clock nanoseconds per backward-pass step.

    ``refinement`` is the iterative-refinement phase that follows step 4; it
    is part of ``total`` but not of ``steps``.
    """

    step1_h_inverse: int = 0
    step2_schur_build: int = 0
    step3_schur_solve: int = 0
    step4_backsub: int = 0
    total: int = 0
    refinement: int = 0
    refine_iterations: int = 0

    @property
    def steps(self):
        return (self.step1_h_inverse, self.step2_schur_build, self.step3_schur_solve, self.step4_backsub)

    @property
    def factorization(self) -> int:
        """Time spent in the two factorization stages (steps 1 and 3)."""
        return self.step1_h_inverse + self.step3_schur_solve


@dataclass(frozen=True)
class TrajectoryDerivatives:
    """``dxi_dtheta`` and ``dlambda_dtheta`` (with the positive sign convention)."""

    dxi_dtheta: np.ndarray
    dlambda_dtheta: np.ndarray
    breakdown: RuntimeBreakdown

    def xi_blocks(self, sizes):
        offs = np.cumsum([0] + list(sizes))
        return [self.dxi_dtheta[offs[k]:offs[k + 1]] for k in range(len(sizes))]


def _selector_rows(a) -> int:
    """``nx`` when ``a == [0; -I_nx 0]`` (identity in the last rows), else 0."""
    rows, cols = a.shape
    if rows == 0 or cols == 0:
        return 0
    # the last row of the shift block holds a single -1 in column nx - 1
    last = a[rows - 1]
    nz = np.flatnonzero(last)
    if nz.size != 1 or last[nz[0]] != -1.0:
        return 0
    nx = int(nz[0]) + 1
    if nx > rows:
        return 0
    if a[: rows - nx].any() or a[rows - nx:, nx:].any():
        return 0
    if not np.array_equal(a[rows - nx:, :nx], -np.eye(nx)):
        return 0
    return nx


@dataclass(frozen=True)
class PackedKkt:
    """Solver-ready layout of a :class:`DiffKktSystem`.

    ``R`` holds one block per stage, ``[A_super_k; A_diag_k; B_k^T]``, where
    the ``A_super`` rows are present only when ``super_rows[k] > 0``; stages
    whose ``A_super`` block is the shift ``[0; -I 0]`` record its identity
    size in ``shift_rows`` instead.
    """

    H: PackedBlocks
    R: PackedBlocks
    C: PackedBlocks
    xi_dims: np.ndarray
    row_dims: np.ndarray
    super_rows: np.ndarray
    shift_rows: np.ndarray
    ntheta: int


def pack_system(sys: DiffKktSystem) -> PackedKkt:
    """Copy the blocks of ``sys`` into flat solver buffers (the Build stage)."""
    n_stage = len(sys.H)
    shift = np.zeros(n_stage, dtype=np.int64)
    sup = np.zeros(n_stage, dtype=np.int64)
    R = []
    for k in range(n_stage):
        nx = _selector_rows(sys.A_super[k]) if k > 0 else 0
        shift[k] = nx
        parts = [sys.A_diag[k], sys.B[k].T]
        if nx == 0:
            parts.insert(0, sys.A_super[k])
            sup[k] = sys.A_super[k].shape[0]
        R.append(np.vstack(parts))
    return PackedKkt(
        PackedBlocks.pack(sys.H.blocks),
        PackedBlocks.pack(R),
        PackedBlocks.pack(sys.C),
        np.array(sys.xi_dims, dtype=np.int64),
        np.array(sys.row_dims, dtype=np.int64),
        sup,
        shift,
        sys.ntheta,
    )


class _Workspace:
    """Scratch buffers for one system shape, reused across solves.

    Large fresh allocations page-fault on first touch, which at benchmark
    sizes costs as much as the arithmetic of a whole step.
    """

    def __init__(self, pk: PackedKkt):
        r, d = pk.row_dims, pk.ntheta
        self.hinv = np.empty(int(pk.H.off[-1]))
        self.sdiag = PackedBlocks.zeros(r, r)
        self.slow = PackedBlocks.zeros(r[1:], r[:-1])
        self.gam = PackedBlocks.zeros(r, d)
        self.pt = PackedBlocks.zeros(pk.R.rows, pk.R.cols)
        self.sweep = {
            "qinv": np.empty_like(self.sdiag.buf),
            "gt": np.empty_like(self.gam.buf),
            "gg": np.empty_like(self.slow.buf),
        }
        self.ooff = np.zeros(len(pk.xi_dims) + 1, dtype=np.int64)
        np.cumsum(pk.xi_dims * d, out=self.ooff[1:])
        self._refine = None

    def refine_buffers(self):
        """Scratch for refinement, allocated on first use."""
        if self._refine is None:
            g, n = self.gam.buf, int(self.ooff[-1])
            self._refine = {name: np.empty_like(g) for name in ("cp", "gam", "gt", "xl")}
            self._refine.update({name: np.empty(n) for name in ("bp", "hb", "e")})
        return self._refine


_WORKSPACES = threading.local()
_WORKSPACE_SLOTS = 4


def _workspace(pk: PackedKkt) -> _Workspace:
    cache = getattr(_WORKSPACES, "cache", None)
    if cache is None:
        cache = _WORKSPACES.cache = OrderedDict()
    key = (pk.xi_dims.tobytes(), pk.row_dims.tobytes(), pk.super_rows.tobytes(), pk.ntheta)
    ws = cache.get(key)
    if ws is None:
        ws = cache[key] = _Workspace(pk)
        while len(cache) > _WORKSPACE_SLOTS:
            cache.popitem(last=False)
    else:
        cache.move_to_end(key)
    return ws


def _schur_build(pk: PackedKkt, Hinv: PackedBlocks, ws: _Workspace):
    """Step 2: Schur blocks and right-hand side.

    ``H_k^{-1} A_{i,k}^T`` and ``H_k^{-1} B_k`` are formed once per stage (in
    one product) and reused for the Schur blocks, the right-hand side and
    back-substitution.
    """
    r, x, d = pk.row_dims, pk.xi_dims, pk.ntheta
    K.schur_build(Hinv.buf, Hinv.off, x, pk.R.buf, pk.R.off, r, pk.super_rows, pk.shift_rows,
                  pk.C.buf, pk.C.off, d, ws.sdiag.buf, ws.sdiag.off, ws.slow.buf, ws.slow.off,
                  ws.gam.buf, ws.gam.off, ws.pt.buf, ws.pt.off)
    return ws.sdiag, ws.slow, ws.gam


def _structured(sys, reg_policy: RegPolicy, method: str, workers, refine: int) -> TrajectoryDerivatives:
    clock = time.perf_counter_ns
    t_start = clock()
    pk = sys if isinstance(sys, PackedKkt) else pack_system(sys)
    ws = _workspace(pk)
    t0 = clock()
    try:
        Hinv, _ = inverse_packed(pk.H, reg_policy, method, workers, out=ws.hinv)
    except NotPositiveDefinite as err:
        raise err.tagged(step="h_inverse") from None
    except SingularSystem as err:
        raise SingularSystem(err.args[0], block=err.block, step="h_inverse") from None
    t1 = clock()
    sdiag, slow, gam = _schur_build(pk, Hinv, ws)
    t2 = clock()
    try:
        X, _ = tridiag_solve_packed(sdiag, slow, gam, reg_policy, method, ws.sweep)
    except NotPositiveDefinite as err:
        raise err.tagged(step="schur_solve") from None
    except SingularSystem as err:
        raise SingularSystem(err.args[0], block=err.block, step="schur_solve") from None
    t3 = clock()
    d = pk.ntheta
    ooff = ws.ooff
    out = np.empty(int(ooff[-1]))
    K.back_substitute(Hinv.buf, Hinv.off, pk.xi_dims, pk.row_dims, pk.super_rows, pk.shift_rows,
                      ws.pt.buf, ws.pt.off, X.buf, X.off, d, out, ooff)
    t4 = clock()
    n_ref = _refine(pk, Hinv, X, out, ws, refine) if refine > 0 else 0
    t5 = clock()
    br = RuntimeBreakdown(t1 - t0, t2 - t1, t3 - t2, t4 - t3, t5 - t_start, t5 - t4, n_ref)
    return TrajectoryDerivatives(out.reshape(-1, d), X.buf.reshape(-1, d), br)


def _refine(pk: PackedKkt, Hinv: PackedBlocks, X: PackedBlocks, out, ws: _Workspace, max_steps: int) -> int:
    """Iterative refinement of ``(out, X)`` against the unregularized system.

    Each pass forms the residual of the full saddle-point equations and
    solves for a correction with the factors of the original solve, so no
    block is factored again. Stops when the correction is negligible or
    stops shrinking; returns the number of corrections applied.
    """
    rb = ws.refine_buffers()
    d, sw = pk.ntheta, ws.sweep
    args = (pk.xi_dims, pk.R.buf, pk.R.off, pk.row_dims, pk.super_rows, pk.shift_rows)
    prev = np.inf
    applied = 0
    for _ in range(max_steps):
        K.kkt_defect(pk.H.buf, pk.H.off, *args, pk.C.buf, pk.C.off, d,
                     out, ws.ooff, X.buf, X.off, rb["bp"], rb["cp"])
        K.correction_solve(Hinv.buf, Hinv.off, *args, d, ws.pt.buf, ws.pt.off,
                           ws.sdiag.buf, ws.sdiag.off, sw["qinv"], ws.slow.buf, ws.slow.off, sw["gg"],
                           rb["bp"], ws.ooff, rb["cp"], X.off, rb["hb"], rb["gam"], rb["gt"], rb["xl"], rb["e"])
        size = max(float(np.max(np.abs(rb["e"]), initial=0.0)), float(np.max(np.abs(rb["xl"]), initial=0.0)))
        if not np.isfinite(size) or size >= prev:
            break
        out += rb["e"]
        np.add(X.buf, rb["xl"], out=X.buf)
        applied += 1
        scale = max(float(np.max(np.abs(out), initial=0.0)), float(np.max(np.abs(X.buf), initial=0.0)))
        if size <= REFINE_RTOL * scale:
            break
        prev = size
    return applied


def fastdoc_backward(sys: DiffKktSystem, reg_policy: RegPolicy = DEFAULT_POLICY, workers=None,
                     refine: int = DEFAULT_REFINE) -> TrajectoryDerivatives:
    """Structured backward pass with Cholesky factorizations in steps 1 and 3.

    Raises :class:`NotPositiveDefinite` tagged with the step and block when a
    factorization fails even after regularization. ``workers`` caps the
    threads used for the independent block inverses of step 1. ``refine``
    bounds the iterative-refinement passes after step 4 (0 disables them);
    they matter when ``A H^{-1} A^T`` is much worse conditioned than the
    saddle-point matrix itself.
    """
    return _structured(sys, reg_policy, "cholesky", workers, int(refine))


def blocklu_backward(sys: DiffKktSystem, workers=None, refine: int = DEFAULT_REFINE) -> TrajectoryDerivatives:
    """The same structured pipeline with partial-pivoting LU for every block."""
    return _structured(sys, DEFAULT_POLICY, "lu", workers, int(refine))


def schur_system(sys: DiffKktSystem, reg_policy: RegPolicy = DEFAULT_POLICY):
    """``(S, gamma)`` exactly as the structured solver forms them."""
    pk = pack_system(sys)
    Hinv, _ = inverse_packed(pk.H, reg_policy, "cholesky", 1)
    sdiag, slow, gam = _schur_build(pk, Hinv, _Workspace(pk))
    S = BlockTriDiagMatrix(tuple(b.copy() for b in sdiag.blocks()), tuple(b.copy() for b in slow.blocks()))
    return S, [b.copy() for b in gam.blocks()]


def dense_backward(sys: DiffKktSystem) -> TrajectoryDerivatives:
    """Monolithic LAPACK solve of the full saddle-point system.

    Raises :class:`SingularSystem` when LU breaks down or the reciprocal
    condition estimate drops below ``DENSE_RCOND_MIN``.
    """
    clock = time.perf_counter_ns
    t0 = clock()
    H, A, B, C = sys.to_dense()
    n, m = H.shape[0], A.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = -np.vstack([B, C])
    anorm = float(np.max(np.sum(np.abs(K), axis=0))) if K.size else 0.0
    lu, piv, info = lapack.dgetrf(K)
    if info > 0:
        raise SingularSystem(f"saddle-point matrix is singular (zero pivot at {info - 1})")
    if info < 0:
        raise ValueError(f"dgetrf argument {-info} invalid")
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if rcond < DENSE_RCOND_MIN:
        raise SingularSystem(f"saddle-point matrix is numerically singular (rcond {rcond:.2e})")
    sol, info = lapack.dgetrs(lu, piv, rhs)
    t1 = clock()
    dxi = sol[:n]
    dlam = -sol[n:]
    return TrajectoryDerivatives(dxi, dlam, RuntimeBreakdown(total=t1 - t0))


def runtime_report(runs) -> dict:
    """Mean percentage share of each step over ``runs``.

    Each run is normalized by its own step sum before averaging, so the shares
    add up to 100.
    """
    runs = list(runs)
    if not runs:
        raise EmptyInput("runtime_report needs at least one run")
    shares = np.zeros(4)
    for r in runs:
        steps = np.array(r.steps, dtype=np.float64)
        total = steps.sum()
        if total <= 0:
            raise ValueError("a run has no recorded step time")
        shares += 100.0 * steps / total
    shares /= len(runs)
    return dict(zip(STEP_NAMES, shares.tolist()))


def saddle_residuals(sys: DiffKktSystem, out: TrajectoryDerivatives):
    """``(stationarity, feasibility)`` infinity-norm residuals of a derivative solve."""
    H, A, B, C = sys.to_dense()
    r1 = H @ out.dxi_dtheta - A.T @ out.dlambda_dtheta + B
    r2 = A @ out.dxi_dtheta + C
    return float(np.max(np.abs(r1), initial=0.0)), float(np.max(np.abs(r2), initial=0.0))
