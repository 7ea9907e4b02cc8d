"""Seeded cross-checks of the structured backward pass against independent oracles.

Synthetic instances compare :func:`fastdoc_backward` with the dense LU
solve of the full saddle-point system. Smooth linear-quadratic OCPs with
strictly inactive control boxes compare it with central differences of the
forward solution.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .bench import control_dim, gen_synthetic, rel_error, stage_rows
from .deriv import dense_backward, fastdoc_backward
from .exceptions import FastDocError
from .forward import fd_sensitivity_oracle, solve_ocp
from .kkt import assemble_dkkt
from .testproblems import random_lq_ocp

DENSE_TOL = 1e-6
FD_TOL = 1e-4
DENSE_CAP = 5000
FD_EVERY = 5
FD_DIMS = (12, 4, 2, 3)
INACTIVE_MARGIN = 1e-3


def saddle_size(N, n, m):
    """Rows of the saddle-point matrix of a synthetic instance."""
    s = stage_rows(m)
    return N * (n + m) + n + n + N * (n + s) + s


def sample_dims(rng, max_N, max_n, max_d, cap):
    """Uniform ``(N, n, d)`` within the caps, with ``N`` shrunk to fit ``cap``."""
    n = int(rng.integers(1, max_n + 1))
    d = int(rng.integers(1, max_d + 1))
    m = control_dim(n)
    s = stage_rows(m)
    per_stage = 2 * n + m + s
    fit = (cap - 2 * n - s) // per_stage
    N = int(rng.integers(1, max(1, min(max_N, fit)) + 1))
    return N, n, d


@dataclass
class CheckResult:
    kind: str
    index: int
    seed: int
    dims: tuple
    error: float
    passed: bool
    note: str = ""


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)
    dense_tol: float = DENSE_TOL
    fd_tol: float = FD_TOL

    @property
    def max_dense(self):
        return max((c.error for c in self.checks if c.kind == "dense"), default=0.0)

    @property
    def max_fd(self):
        return max((c.error for c in self.checks if c.kind == "fd"), default=0.0)

    @property
    def failures(self):
        return [c for c in self.checks if not c.passed]

    @property
    def ok(self):
        return not self.failures

    def to_dict(self):
        return {
            "dense_tol": self.dense_tol,
            "fd_tol": self.fd_tol,
            "max_dense_error": self.max_dense,
            "max_fd_error": self.max_fd,
            "n_checks": len(self.checks),
            "failed_seeds": sorted({c.seed for c in self.failures}),
            "checks": [asdict(c) for c in self.checks],
        }


def _instance_seed(seed, index, tag):
    ss = np.random.SeedSequence([int(seed), int(index), tag])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def dense_check(index, seed, max_N, max_n, max_d, cap, tol) -> CheckResult:
    s = _instance_seed(seed, index, 0)
    rng = np.random.default_rng(s)
    N, n, d = sample_dims(rng, max_N, max_n, max_d, cap)
    dims = (N, n, control_dim(n), d)
    try:
        sys = gen_synthetic(N, n, control_dim(n), d, seed=s)
        err = rel_error(fastdoc_backward(sys, workers=1), dense_backward(sys))
    except FastDocError as exc:
        return CheckResult("dense", index, s, dims, float("inf"), False, f"{type(exc).__name__}: {exc}")
    return CheckResult("dense", index, s, dims, err, bool(err < tol))


def fd_check(index, seed, tol) -> CheckResult:
    """Backward pass vs finite differences on a boxed LQ problem whose boxes stay inactive."""
    s = _instance_seed(seed, index, 1)
    N, nx, nu, nth = FD_DIMS
    ocp = random_lq_ocp(N, nx, nu, nth, seed=s)
    theta = np.random.default_rng(s).uniform(-1.0, 1.0, nth)
    try:
        free = solve_ocp(ocp, theta)
        _, us = ocp.unstack_xi(free.xi)
        # boxes with a margin, so every row is strictly inactive at the optimum
        ocp.u_max = float(np.max(np.abs(us))) + 1.0
        sol = solve_ocp(ocp, theta)
        if any(m.any() for m in sol.active_mask):
            return CheckResult("fd", index, s, FD_DIMS, float("inf"), False, "box became active")
        der = fastdoc_backward(assemble_dkkt(ocp, sol, theta), workers=1).dxi_dtheta
        ref = fd_sensitivity_oracle(ocp, theta)
    except FastDocError as exc:
        return CheckResult("fd", index, s, FD_DIMS, float("inf"), False, f"{type(exc).__name__}: {exc}")
    scale = float(np.max(np.abs(ref)))
    err = float(np.max(np.abs(der - ref))) / scale if scale > 0 else float(np.max(np.abs(der)))
    return CheckResult("fd", index, s, FD_DIMS, err, bool(err < tol))


def run_verify(instances=100, seed=0, max_N=200, max_n=64, max_d=100, dense_cap=DENSE_CAP,
               dense_tol=DENSE_TOL, fd_tol=FD_TOL, progress=None) -> VerifyReport:
    """Dense-oracle check on every instance and an FD check on every fifth.

    Sampled sizes keep the saddle-point system within ``dense_cap`` rows so
    the dense oracle stays affordable.
    """
    if instances < 0:
        raise ValueError("instances must be nonnegative")
    report = VerifyReport(dense_tol=dense_tol, fd_tol=fd_tol)
    with threadpool_limits(limits=1):
        for i in range(instances):
            report.checks.append(dense_check(i, seed, max_N, max_n, max_d, dense_cap, dense_tol))
            if i % FD_EVERY == 0:
                report.checks.append(fd_check(i, seed, fd_tol))
            if progress is not None:
                progress(i, report)
    return report
