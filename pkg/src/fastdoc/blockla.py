"""Block-structured dense linear algebra.

Blocks are plain C-contiguous ``float64`` numpy arrays. The two container
types, :class:`BlockDiagMatrix` and :class:`BlockTriDiagMatrix`, are immutable
after construction. Factorizations run through the compiled kernels in
:mod:`fastdoc._kernels`; the Cholesky family is the fast path and the
partial-pivoting LU family is the baseline with the same loop structure.
"""

from __future__ import annotations

import contextlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .exceptions import DimensionMismatch, NotPositiveDefinite, SingularSystem
from .validation import SYMMETRY_RTOL, check_block, check_square, is_symmetric

__all__ = [
    "RegPolicy",
    "CholeskyFactor",
    "LUFactor",
    "BlockDiagMatrix",
    "BlockTriDiagMatrix",
    "FlopCounter",
    "flop_counter",
    "cholesky_factor",
    "cholesky_solve",
    "cholesky_inverse",
    "lu_factor",
    "lu_solve",
    "lu_inverse",
    "blockdiag_inverse",
    "blocktridiag_solve",
    "blocktridiag_schur_blocks_psd_check",
    "PackedBlocks",
    "inverse_packed",
    "tridiag_solve_packed",
]


@dataclass(frozen=True)
class RegPolicy:
    """Diagonal shift applied when a Cholesky pivot fails.

    The first shift is ``max(floor, rel * trace(m) / n)``; each further retry
    multiplies it by ``growth``, at most ``escalations`` times.
    ``pivot_rtol`` sets the pivot threshold relative to the largest diagonal
    entry below which a block is treated as not numerically positive definite.
    """

    enabled: bool = True
    rel: float = 1e-10
    floor: float = 1e-12
    growth: float = 100.0
    escalations: int = 3
    pivot_rtol: float = 1e-13

    @classmethod
    def none(cls) -> "RegPolicy":
        return cls(enabled=False)

    def as_array(self) -> np.ndarray:
        """Parameter vector consumed by the compiled kernels."""
        return np.array([float(self.enabled), self.rel, self.floor, self.growth,
                         float(self.escalations), self.pivot_rtol])

    def shifts(self, m: np.ndarray):
        if not self.enabled:
            return
        n = m.shape[0]
        mu = max(self.floor, self.rel * abs(float(np.trace(m))) / max(n, 1))
        for _ in range(self.escalations + 1):
            yield mu
            mu *= self.growth


DEFAULT_POLICY = RegPolicy()


# ---------------------------------------------------------------------------
# flop accounting


@dataclass
class FlopCounter:
    """Accumulates kernel operation counts while active."""

    factor: int = 0
    substitution: int = 0
    factor_calls: list = field(default_factory=list)

    def add(self, counts, kind):
        self.factor += int(counts[K.FACTOR])
        self.substitution += int(counts[K.SUBST])
        if counts[K.FACTOR]:
            self.factor_calls.append((kind, int(counts[K.FACTOR])))


_ACTIVE_COUNTERS: list[FlopCounter] = []


@contextlib.contextmanager
def flop_counter():
    """Context manager collecting flop counts of every kernel call inside it."""
    counter = FlopCounter()
    _ACTIVE_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _ACTIVE_COUNTERS.remove(counter)


def _new_counts():
    return np.zeros(2, dtype=np.int64)


def _report(counts, kind):
    for c in _ACTIVE_COUNTERS:
        c.add(counts, kind)


# ---------------------------------------------------------------------------
# single-block factorizations


@dataclass(frozen=True)
class CholeskyFactor:
    lower: np.ndarray
    regularization_used: float = 0.0

    @property
    def n(self) -> int:
        return self.lower.shape[0]


@dataclass(frozen=True)
class LUFactor:
    lu: np.ndarray
    piv: np.ndarray

    @property
    def n(self) -> int:
        return self.lu.shape[0]


def cholesky_factor(m, reg_policy: RegPolicy = DEFAULT_POLICY, check: bool = True) -> CholeskyFactor:
    """Cholesky factor ``L`` with ``L L^T = m + mu I``.

    ``mu`` is zero when ``m`` is numerically positive definite; otherwise it
    escalates according to ``reg_policy``. Raises :class:`NotPositiveDefinite`
    when every allowed shift fails.
    """
    if check:
        m = check_square(m, "matrix")
        if not is_symmetric(m, SYMMETRY_RTOL):
            raise ValueError("cholesky_factor needs a symmetric matrix")
    n = m.shape[0]
    L = np.zeros((n, n))
    counts = _new_counts()
    bad, mu, pivot = K.chol_regularized(m, L, reg_policy.as_array(), counts)
    _report(counts, "cholesky")
    if bad >= 0:
        raise NotPositiveDefinite(f"Cholesky pivot {pivot:.3e} at row {bad} is not positive", pivot=pivot)
    return CholeskyFactor(L, mu)


def cholesky_solve(f: CholeskyFactor, rhs) -> np.ndarray:
    """Solve ``(L L^T) X = rhs`` by forward then backward substitution."""
    rhs = np.asarray(rhs, dtype=np.float64)
    vec = rhs.ndim == 1
    X = np.array(rhs.reshape(-1, 1) if vec else rhs, dtype=np.float64, order="C")
    if X.shape[0] != f.n:
        raise DimensionMismatch(f"factor has side {f.n}, rhs has {X.shape[0]} rows")
    counts = _new_counts()
    K.lower_solve(f.lower, X, counts)
    K.lower_t_solve(f.lower, X, counts)
    _report(counts, "cholesky")
    return X.ravel() if vec else X


def cholesky_inverse(f: CholeskyFactor) -> np.ndarray:
    """``(L L^T)^{-1}``: forward substitution against ``I`` then ``L^{-T} Y``.

    ``L Y = I`` gives the triangular ``Y = L^{-1}``; the backward step
    ``L^T X = Y`` equals ``X = Y^T Y``, formed on one triangle and mirrored.
    """
    n = f.n
    Y = np.empty((n, n))
    X = np.empty((n, n))
    counts = _new_counts()
    K.lower_inverse(f.lower, Y, counts)
    K.lower_gram(Y, X, counts)
    _report(counts, "cholesky")
    return X


def lu_factor(m, pivot_rtol: float = 1e-13, check: bool = True) -> LUFactor:
    """Partial-pivoting LU; raises :class:`SingularSystem` on a vanishing pivot."""
    if check:
        m = check_square(m, "matrix")
    n = m.shape[0]
    LU = np.empty((n, n))
    piv = np.empty(n, dtype=np.int64)
    counts = _new_counts()
    scale = float(np.max(np.abs(m))) if n else 0.0
    bad = K.lu_factor(m, LU, piv, pivot_rtol * scale, counts)
    _report(counts, "lu")
    if bad >= 0:
        raise SingularSystem(f"LU pivot vanished at column {bad}")
    return LUFactor(LU, piv)


def lu_solve(f: LUFactor, rhs) -> np.ndarray:
    rhs = np.asarray(rhs, dtype=np.float64)
    vec = rhs.ndim == 1
    X = np.array(rhs.reshape(-1, 1) if vec else rhs, dtype=np.float64, order="C")
    if X.shape[0] != f.n:
        raise DimensionMismatch(f"factor has side {f.n}, rhs has {X.shape[0]} rows")
    counts = _new_counts()
    K.lu_solve(f.lu, f.piv, X, counts)
    _report(counts, "lu")
    return X.ravel() if vec else X


def lu_inverse(f: LUFactor) -> np.ndarray:
    n = f.n
    Linv = np.empty((n, n))
    Uinv = np.empty((n, n))
    counts = _new_counts()
    X = np.empty((n, n))
    K.lu_triangular_inverses(f.lu, Linv, Uinv, counts)
    K.upper_lower_product(Uinv, Linv, X, counts)
    _report(counts, "lu")
    K.undo_column_pivots(X, f.piv)
    return X


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class BlockDiagMatrix:
    blocks: tuple
    symmetric: bool = True
    regularization: tuple = ()

    def __post_init__(self):
        blocks = tuple(check_square(b, f"block {k}") for k, b in enumerate(self.blocks))
        if self.symmetric:
            for k, b in enumerate(blocks):
                if not is_symmetric(b):
                    raise ValueError(f"block {k} is not symmetric")
        object.__setattr__(self, "blocks", blocks)

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, k):
        return self.blocks[k]

    @property
    def sizes(self) -> list[int]:
        return [b.shape[0] for b in self.blocks]

    def to_dense(self) -> np.ndarray:
        n = sum(self.sizes)
        out = np.zeros((n, n))
        o = 0
        for b in self.blocks:
            s = b.shape[0]
            out[o:o + s, o:o + s] = b
            o += s
        return out


@dataclass(frozen=True)
class BlockTriDiagMatrix:
    """Block tridiagonal matrix; ``lower[k]`` is block ``(k+1, k)``.

    With ``symmetric`` set the upper blocks are ``lower[k].T`` and are not
    stored.
    """

    diag: tuple
    lower: tuple
    symmetric: bool = True

    def __post_init__(self):
        diag = tuple(check_square(q, f"diag {k}") for k, q in enumerate(self.diag))
        lower = tuple(check_block(b, f"lower {k}") for k, b in enumerate(self.lower))
        if len(diag) == 0:
            raise DimensionMismatch("block tridiagonal matrix needs at least one block")
        if len(lower) != len(diag) - 1:
            raise DimensionMismatch(
                f"{len(diag)} diagonal blocks need {len(diag) - 1} lower blocks, got {len(lower)}"
            )
        for k, b in enumerate(lower):
            if b.shape != (diag[k + 1].shape[0], diag[k].shape[0]):
                raise DimensionMismatch(
                    f"lower {k} has shape {b.shape}, expected "
                    f"{(diag[k + 1].shape[0], diag[k].shape[0])}"
                )
        if self.symmetric:
            for k, q in enumerate(diag):
                if not is_symmetric(q):
                    raise ValueError(f"diag {k} is not symmetric")
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "lower", lower)

    @property
    def sizes(self) -> list[int]:
        return [q.shape[0] for q in self.diag]

    def to_dense(self) -> np.ndarray:
        sizes = self.sizes
        offs = np.concatenate([[0], np.cumsum(sizes)])
        out = np.zeros((offs[-1], offs[-1]))
        for k, q in enumerate(self.diag):
            out[offs[k]:offs[k + 1], offs[k]:offs[k + 1]] = q
        for k, b in enumerate(self.lower):
            out[offs[k + 1]:offs[k + 2], offs[k]:offs[k + 1]] = b
            out[offs[k]:offs[k + 1], offs[k + 1]:offs[k + 2]] = b.T
        return out


# ---------------------------------------------------------------------------
# block algorithms


@dataclass(frozen=True)
class PackedBlocks:
    """A list of dense blocks stored back to back in one flat buffer.

    Block ``k`` is ``buf[off[k]:off[k+1]]`` reshaped to ``(rows[k], cols[k])``.
    The compiled block algorithms work on this layout so a whole pass over
    the blocks is a single call.
    """

    buf: np.ndarray
    off: np.ndarray
    rows: np.ndarray
    cols: np.ndarray

    @classmethod
    def zeros(cls, rows, cols) -> "PackedBlocks":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.broadcast_to(np.asarray(cols, dtype=np.int64), rows.shape).copy()
        off = np.zeros(rows.shape[0] + 1, dtype=np.int64)
        np.cumsum(rows * cols, out=off[1:])
        return cls(np.zeros(int(off[-1])), off, rows, cols)

    @classmethod
    def pack(cls, blocks) -> "PackedBlocks":
        rows = np.array([b.shape[0] for b in blocks], dtype=np.int64)
        cols = np.array([b.shape[1] for b in blocks], dtype=np.int64)
        off = np.zeros(len(blocks) + 1, dtype=np.int64)
        np.cumsum(rows * cols, out=off[1:])
        buf = np.concatenate([np.ravel(b) for b in blocks]) if blocks else np.zeros(0)
        return cls(np.ascontiguousarray(buf, dtype=np.float64), off, rows, cols)

    def __len__(self):
        return self.rows.shape[0]

    def block(self, k) -> np.ndarray:
        return self.buf[self.off[k]:self.off[k + 1]].reshape(int(self.rows[k]), int(self.cols[k]))

    def blocks(self) -> list:
        return [self.block(k) for k in range(len(self))]

    def vstack(self) -> np.ndarray:
        """Stack blocks that share a column count."""
        if len(self) == 0:
            return np.zeros((0, 0))
        return self.buf.reshape(-1, int(self.cols[0])) if np.all(self.cols == self.cols[0]) else np.vstack(self.blocks())


_METHODS = {"cholesky": 0, "lu": 1}


def _worker_count(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("FASTDOC_THREADS")
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def inverse_packed(h: PackedBlocks, reg_policy: RegPolicy = DEFAULT_POLICY, method: str = "cholesky",
                   workers: int | None = None, out: np.ndarray | None = None):
    """Invert every block of a packed block diagonal; returns ``(inverse, shifts)``.

    Blocks are independent, so the range is split across threads when more
    than one worker is allowed; the output does not depend on the split.
    ``out`` optionally supplies the result buffer.
    """
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}")
    nb = len(h)
    buf = np.empty_like(h.buf) if out is None else out
    inv = PackedBlocks(buf, h.off, h.rows, h.cols)
    reg = reg_policy.as_array()
    fcounts = np.zeros(nb, dtype=np.int64)
    shifts = np.zeros(nb)
    status = np.full(nb, -1, dtype=np.int64)
    code = _METHODS[method]
    n_workers = min(_worker_count(workers), nb) if nb else 1
    bounds = np.linspace(0, nb, n_workers + 1).astype(np.int64)
    all_counts = [_new_counts() for _ in range(n_workers)]

    def run(w):
        return K.inverse_batch(h.buf, h.off, h.rows, bounds[w], bounds[w + 1], buf, code, reg,
                               all_counts[w], fcounts, shifts, status)

    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            fails = list(pool.map(run, range(n_workers)))
    else:
        fails = [run(0)]
    if _ACTIVE_COUNTERS:
        counts = np.sum(all_counts, axis=0)
        for c in _ACTIVE_COUNTERS:
            c.substitution += int(counts[K.SUBST])
            c.factor += int(counts[K.FACTOR])
            c.factor_calls.extend((method, int(f)) for f in fcounts if f)
    bad = [k for k in fails if k >= 0]
    if bad:
        k = min(bad)
        if method == "cholesky":
            raise NotPositiveDefinite(
                f"Cholesky pivot {shifts[k]:.3e} at row {status[k]} is not positive",
                block=int(k), pivot=float(shifts[k]),
            )
        raise SingularSystem(f"LU pivot vanished at column {status[k]}", block=int(k))
    return inv, (shifts if method == "cholesky" else np.zeros(nb))


def blockdiag_inverse(
    h: BlockDiagMatrix,
    reg_policy: RegPolicy = DEFAULT_POLICY,
    method: str = "cholesky",
    workers: int | None = None,
) -> BlockDiagMatrix:
    """Blockwise inverse of a block-diagonal matrix.

    Each block is factored and solved against the identity independently
    (Cholesky: ``L^{-1}`` by forward substitution, then ``L^{-T} L^{-1}``;
    LU: ``U^{-1} L^{-1} P``). The loop may run on a thread pool
    (``workers`` or ``FASTDOC_THREADS``); results do not depend on the
    worker count. Errors carry the failing block index.
    """
    out, shifts = inverse_packed(PackedBlocks.pack(h.blocks), reg_policy, method, workers)
    return BlockDiagMatrix(tuple(out.blocks()), symmetric=method == "cholesky",
                           regularization=tuple(float(x) for x in shifts))


def tridiag_solve_packed(diag: PackedBlocks, lower: PackedBlocks, gamma: PackedBlocks,
                         reg_policy: RegPolicy = DEFAULT_POLICY, method: str = "cholesky",
                         work: dict | None = None):
    """Packed form of :func:`blocktridiag_solve`; returns ``(X, shifts)``.

    ``work`` may hold reusable ``qinv``, ``gt`` and ``gg`` scratch buffers
    sized like ``diag``, ``gamma`` and ``lower``.
    """
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}")
    rdims = diag.rows
    d = int(gamma.cols[0]) if len(gamma) else 0
    if work is None:
        work = {"qinv": np.empty_like(diag.buf), "gt": np.empty_like(gamma.buf), "gg": np.empty_like(lower.buf)}
    xbuf = np.empty_like(gamma.buf)
    counts = _new_counts()
    info = np.zeros(2)
    shifts = np.zeros(len(diag))
    bad = K.tridiag_sweep(diag.buf, diag.off, lower.buf, lower.off, rdims, gamma.buf, gamma.off, d,
                          _METHODS[method], reg_policy.as_array(), counts,
                          work["qinv"], work["gt"], work["gg"], xbuf, shifts, info)
    _report(counts, method)
    if bad >= 0:
        if method == "cholesky":
            raise NotPositiveDefinite(
                f"Cholesky pivot {info[1]:.3e} at row {int(info[0])} of the reduced block is not positive",
                block=int(bad), pivot=float(info[1]),
            )
        raise SingularSystem(f"LU pivot vanished at column {int(info[0])} of the reduced block", block=int(bad))
    return PackedBlocks(xbuf, gamma.off, gamma.rows, gamma.cols), (shifts if method == "cholesky" else np.zeros(len(diag)))


def _check_gamma(s, gamma):
    gamma = [np.ascontiguousarray(g, dtype=np.float64) for g in gamma]
    if len(gamma) != len(s.diag):
        raise DimensionMismatch(f"gamma has {len(gamma)} blocks, matrix has {len(s.diag)}")
    cols = {g.shape[1] for g in gamma if g.ndim == 2}
    for k, g in enumerate(gamma):
        if g.ndim != 2 or g.shape[0] != s.diag[k].shape[0]:
            raise DimensionMismatch(f"gamma block {k} has shape {g.shape}, expected {s.diag[k].shape[0]} rows")
    if len(cols) > 1:
        raise DimensionMismatch("gamma blocks have differing column counts")
    return gamma


def blocktridiag_solve(
    s: BlockTriDiagMatrix,
    gamma,
    reg_policy: RegPolicy = DEFAULT_POLICY,
    method: str = "cholesky",
) -> list[np.ndarray]:
    """Solve ``S X = gamma`` for symmetric block tridiagonal ``S``.

    A strictly sequential forward sweep builds the reduced diagonal blocks and
    right-hand sides, then backward substitution recovers ``X`` block by
    block. With ``method="cholesky"`` every reduced block is Cholesky factored
    (they are PSD whenever ``S`` is); ``method="lu"`` is the pivoting baseline.
    ``gamma`` is a list of 2-D blocks with matching row counts.
    """
    if not s.symmetric:
        raise ValueError("blocktridiag_solve needs a symmetric block tridiagonal matrix")
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}")
    gamma = _check_gamma(s, gamma)
    X, _ = tridiag_solve_packed(PackedBlocks.pack(s.diag), PackedBlocks.pack(s.lower),
                                PackedBlocks.pack(gamma), reg_policy, method)
    return [b.copy() for b in X.blocks()]


def blocktridiag_schur_blocks_psd_check(s: BlockTriDiagMatrix, eig_limit: int = 64) -> list[float]:
    """Minimum-eigenvalue estimates of the reduced diagonal blocks of the sweep.

    Blocks up to ``eig_limit`` use a symmetric eigensolve; larger ones use the
    squared smallest Cholesky pivot. Once a block cannot be factored, it and
    every later block report ``-inf``. Diagnostic only: never raises.
    """
    out: list[float] = []
    Qt = s.diag[0]
    M = len(s.lower)
    for r in range(M + 1):
        n = Qt.shape[0]
        if n == 0:
            est = np.inf
        elif n <= eig_limit:
            est = float(np.linalg.eigvalsh(0.5 * (Qt + Qt.T))[0])
        else:
            est = None
        try:
            f = cholesky_factor(Qt, RegPolicy.none(), check=False)
        except NotPositiveDefinite:
            out.extend([-np.inf] * (M + 1 - r))
            return out
        if est is None:
            est = float(np.min(np.diagonal(f.lower)) ** 2)
        out.append(est)
        if r == M:
            break
        W = np.array(s.lower[r].T, order="C")
        K.lower_solve(f.lower, W, _new_counts())
        Qt = s.diag[r + 1] - W.T @ W
    return out
