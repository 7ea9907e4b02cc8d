"""Synthetic differential KKT instances and the runtime sweep harness."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .blockla import BlockDiagMatrix
from .deriv import blocklu_backward, dense_backward, fastdoc_backward
from .exceptions import FastDocError, MissingPair, RankDeficientSample
from .kkt import DiffKktSystem
from .validation import check_positive_int

CSV_COLUMNS = (
    "sweep", "varied_value", "solver", "trial", "build_ns",
    "step1_ns", "step2_ns", "step3_ns", "step4_ns", "total_ns", "rel_err",
)
SOLVERS = ("fastdoc", "blocklu", "dense")
RANK_PIVOT_TOL = 1e-10
MAX_RESAMPLES = 100


def control_dim(n: int) -> int:
    return max(1, math.ceil(n / 4))


def stage_rows(m: int) -> int:
    """Stage-constraint rows per stage; keeps every stacked A strictly wide."""
    return m // 2


def _spd_block(rng, n, cond):
    G = rng.uniform(-1.0, 1.0, size=(n, n))
    G = 0.5 * (G + G.T)
    lam, V = np.linalg.eigh(G)
    lo = 1.0 / cond
    spread = lam[-1] - lam[0]
    if spread <= 0.0 or cond == 1.0:
        target = np.ones(n)
    else:
        target = lo + (lam - lam[0]) * (1.0 - lo) / spread
        target[0], target[-1] = lo, 1.0
    H = (V * target) @ V.T
    return 0.5 * (H + H.T)


def _reduced_ok(Q):
    """Cholesky with a relative pivot floor; ``False`` when rank is lost."""
    n = Q.shape[0]
    if n == 0:
        return True, Q
    tol = RANK_PIVOT_TOL * max(1.0, float(np.max(np.abs(np.diagonal(Q)))))
    try:
        L = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        return False, None
    if np.min(np.diagonal(L)) ** 2 <= tol:
        return False, None
    return True, L


def gen_synthetic(N, n, m, d, cond=1e3, seed=0) -> DiffKktSystem:
    """Random well-posed differential KKT system with OCP block structure.

    Stage ``k < N`` has ``n + m`` primal variables, ``n`` dynamics rows and
    ``m // 2`` stage-constraint rows; the terminal stage has ``n`` variables
    and ``m // 2`` rows. Every ``H_k`` has spectrum exactly in
    ``[1 / cond, 1]``. Row blocks of ``A`` are resampled until the stacked
    matrix has full row rank, judged by the pivots of a sweep over the block
    tridiagonal ``A A^T``.
    """
    N = check_positive_int(N, "N")
    n = check_positive_int(n, "n")
    m = check_positive_int(m, "m")
    d = check_positive_int(d, "d")
    if not cond >= 1.0:
        raise ValueError(f"cond must be >= 1, got {cond}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    s = stage_rows(m)
    xi_dims = [n + m] * N + [n]

    H = [_spd_block(rng, nk, float(cond)) for nk in xi_dims]

    A_super = []
    sup0 = np.zeros((n, xi_dims[0]))
    sup0[:, :n] = np.eye(n)
    A_super.append(sup0)
    for k in range(1, N + 1):
        a = np.zeros((s + n, xi_dims[k]))
        a[s:, :n] = -np.eye(n)
        A_super.append(a)

    def diag_rows(k):
        return s + n if k < N else s

    # sweep A A^T row block by row block, resampling the random block that
    # introduces each row block until its reduced block stays definite
    A_diag = []
    ok, L = _reduced_ok(sup0 @ sup0.T)
    W_prev = None
    for k in range(N + 1):
        rows = diag_rows(k)
        for _ in range(MAX_RESAMPLES):
            a = rng.uniform(-1.0, 1.0, size=(rows, xi_dims[k]))
            nxt_sup = A_super[k + 1] if k < N else None
            diag_block = a @ a.T
            if nxt_sup is not None:
                diag_block = diag_block + nxt_sup @ nxt_sup.T
            coupling = a @ A_super[k].T
            W = np.linalg.solve(L, coupling.T) if L.shape[0] else np.zeros((0, rows))
            Q = diag_block - W.T @ W
            ok, L_next = _reduced_ok(Q)
            if ok:
                break
        else:
            raise RankDeficientSample(f"row block {k} stayed rank deficient after {MAX_RESAMPLES} draws")
        A_diag.append(a)
        L = L_next

    B = [rng.uniform(-1.0, 1.0, size=(nk, d)) for nk in xi_dims]
    row_dims = [n] + [diag_rows(k) for k in range(N + 1)]
    C = [rng.uniform(-1.0, 1.0, size=(r, d)) for r in row_dims]
    return DiffKktSystem(
        BlockDiagMatrix(tuple(H)),
        tuple(A_diag),
        tuple(A_super),
        tuple(B),
        tuple(C),
        meta={"N": N, "n": n, "m": m, "d": d, "cond": float(cond), "seed": seed},
    )


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class BenchConfig:
    sweeps: dict = field(default_factory=lambda: {"N": [50, 100, 200, 400, 800], "n": [8, 16, 32, 64], "d": [10, 50, 100]})
    N: int = 100
    n: int = 16
    d: int = 50
    trials: int = 20
    seed: int = 0
    solvers: tuple = SOLVERS
    cond: float = 1e3
    dense_cap: int = 5000

    def __post_init__(self):
        self.N = check_positive_int(self.N, "N")
        self.n = check_positive_int(self.n, "n")
        self.d = check_positive_int(self.d, "d")
        self.trials = check_positive_int(self.trials, "trials")
        self.solvers = tuple(self.solvers)
        for s in self.solvers:
            if s not in SOLVERS:
                raise ValueError(f"unknown solver {s!r}")
        if not self.solvers:
            raise ValueError("solver set is empty")
        if not self.cond >= 1.0:
            raise ValueError("cond must be >= 1")
        sweeps = {}
        for name, values in dict(self.sweeps).items():
            if name not in ("N", "n", "d"):
                raise ValueError(f"cannot sweep {name!r}")
            sweeps[name] = [check_positive_int(v, name) for v in values]
        self.sweeps = sweeps

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "BenchConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["solvers"] = list(self.solvers)
        return out

    def points(self):
        for name, values in self.sweeps.items():
            for v in values:
                dims = {"N": self.N, "n": self.n, "d": self.d}
                dims[name] = v
                yield name, v, dims


@dataclass
class BenchRecord:
    sweep: str
    varied_value: int
    solver: str
    trial: int
    build_ns: Optional[int] = None
    step1_ns: Optional[int] = None
    step2_ns: Optional[int] = None
    step3_ns: Optional[int] = None
    step4_ns: Optional[int] = None
    total_ns: Optional[int] = None
    rel_err: Optional[float] = None
    error: Optional[str] = field(default=None, compare=False)

    @property
    def factorization_ns(self):
        if self.step1_ns is None or self.step3_ns is None:
            return None
        return self.step1_ns + self.step3_ns


def rel_error(out, ref) -> float:
    """Relative infinity-norm error of the stacked ``(dxi, dlambda)``."""
    a = np.vstack([out.dxi_dtheta, out.dlambda_dtheta])
    b = np.vstack([ref.dxi_dtheta, ref.dlambda_dtheta])
    scale = float(np.max(np.abs(b), initial=0.0))
    diff = float(np.max(np.abs(a - b), initial=0.0))
    return diff / scale if scale > 0 else diff


def _run(solver, sys):
    if solver == "fastdoc":
        return fastdoc_backward(sys, workers=1)
    if solver == "blocklu":
        return blocklu_backward(sys, workers=1)
    return dense_backward(sys)


def point_seed(seed, sweep, value, trial) -> int:
    """Independent, reproducible seed for one (sweep, value, trial)."""
    tag = [ord(c) for c in sweep]
    ss = np.random.SeedSequence([int(seed), *tag, int(value), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_sweep(cfg: BenchConfig, csv_path=None, progress=None) -> list:
    """Time every enabled solver at every sweep point and trial.

    A failed solve becomes a record with ``error`` set and empty timings; the
    sweep continues. The dense oracle runs only when it is an enabled solver
    and the saddle system has at most ``dense_cap`` rows.
    """
    records = []
    clock = time.perf_counter_ns
    with threadpool_limits(limits=1):
        for sweep, value, dims in cfg.points():
            n = dims["n"]
            for trial in range(cfg.trials):
                seed = point_seed(cfg.seed, sweep, value, trial)
                t0 = clock()
                try:
                    sys = gen_synthetic(dims["N"], n, control_dim(n), dims["d"], cfg.cond, seed)
                except FastDocError as err:
                    for solver in cfg.solvers:
                        records.append(BenchRecord(sweep, value, solver, trial, error=f"generation: {err}"))
                    continue
                build = clock() - t0
                ref = None
                run_dense = "dense" in cfg.solvers and sys.size <= cfg.dense_cap
                outs = {}
                order = (["dense"] if run_dense else []) + [s for s in cfg.solvers if s != "dense"]
                for solver in order:
                    try:
                        if trial == 0:
                            _run(solver, sys)
                        outs[solver] = _run(solver, sys)
                    except (FastDocError, ArithmeticError) as err:
                        outs[solver] = err
                ref = outs.get("dense")
                if isinstance(ref, Exception):
                    ref = None
                for solver in cfg.solvers:
                    rec = BenchRecord(sweep, value, solver, trial, build_ns=build)
                    if solver == "dense" and not run_dense:
                        rec.error = f"dense skipped: size {sys.size} > cap {cfg.dense_cap}"
                        records.append(rec)
                        continue
                    out = outs[solver]
                    if isinstance(out, Exception):
                        rec.error = f"{type(out).__name__}: {out}"
                        records.append(rec)
                        continue
                    br = out.breakdown
                    rec.step1_ns, rec.step2_ns, rec.step3_ns, rec.step4_ns = br.steps
                    rec.total_ns = br.total
                    if ref is not None:
                        rec.rel_err = 0.0 if solver == "dense" else rel_error(out, ref)
                    records.append(rec)
                if progress is not None:
                    progress(sweep, value, trial)
    if csv_path is not None:
        write_csv(records, csv_path)
    return records


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def write_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def read_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        for row in reader:
            def num(key, kind=int):
                return None if row[key] == "" else kind(row[key])

            out.append(BenchRecord(
                sweep=row["sweep"],
                varied_value=int(row["varied_value"]),
                solver=row["solver"],
                trial=int(row["trial"]),
                build_ns=num("build_ns"),
                step1_ns=num("step1_ns"),
                step2_ns=num("step2_ns"),
                step3_ns=num("step3_ns"),
                step4_ns=num("step4_ns"),
                total_ns=num("total_ns"),
                rel_err=num("rel_err", float),
            ))
    return out


def _geomean(xs):
    xs = np.asarray(xs, dtype=np.float64)
    return float(np.exp(np.mean(np.log(xs))))


def speedup_summary(records, against=("blocklu", "dense")) -> dict:
    """Geometric-mean speedup of fastdoc over each baseline per sweep point.

    Keys are ``"<sweep>=<value>"``; each entry maps a baseline to its
    ``total`` ratio and, for the structured baseline, the
    ``factorization`` (steps 1 + 3) ratio. Baselines absent from
    ``records`` are skipped; a fastdoc trial without its baseline partner
    raises :class:`MissingPair`.
    """
    ok = [r for r in records if r.error is None and r.total_ns is not None]
    present = {r.solver for r in ok}
    if "fastdoc" not in present:
        raise MissingPair("no completed fastdoc records")
    index = {(r.sweep, r.varied_value, r.solver, r.trial): r for r in ok}
    summary: dict = {}
    for r in ok:
        if r.solver != "fastdoc":
            continue
        key = f"{r.sweep}={r.varied_value}"
        point = summary.setdefault(key, {})
        for base in against:
            if base not in present:
                continue
            other = index.get((r.sweep, r.varied_value, base, r.trial))
            if other is None:
                raise MissingPair(f"{base} has no record for {key} trial {r.trial}")
            slot = point.setdefault(base, {"total": [], "factorization": []})
            slot["total"].append(other.total_ns / r.total_ns)
            if base != "dense":
                slot["factorization"].append(other.factorization_ns / r.factorization_ns)
    for point in summary.values():
        for base, slot in point.items():
            slot["total"] = _geomean(slot["total"])
            slot["factorization"] = _geomean(slot["factorization"]) if slot["factorization"] else None
    return summary


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def mean_by_point(records, solver, field_name="total_ns"):
    groups: dict = {}
    for r in records:
        if r.solver == solver and r.error is None and getattr(r, field_name) is not None:
            groups.setdefault((r.sweep, r.varied_value), []).append(getattr(r, field_name))
    return {k: float(np.mean(v)) for k, v in groups.items()}
