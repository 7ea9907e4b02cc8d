"""Differential KKT systems of parametric optimal control problems.

The stacked decision variable is ``xi = (xi_0, ..., xi_N)`` with
``xi_k = (x_k, u_k)`` for ``k < N`` and ``xi_N = x_N``. Constraints are
stacked as ``c = (c_{-1}, c_0, ..., c_N)`` where ``c_{-1} = x_0 - x_init``,
``c_k = (active g_k, h_k, f_k(xi_k) - x_{k+1})`` and ``c_N = (active g_N, h_N)``.

Row block ``i`` of the constraint Jacobian touches at most stages ``i`` and
``i + 1``. Blocks are stored per stage ``k``:

* ``A_diag[k] = d c_k / d xi_k``      (row block ``k``)
* ``A_super[k] = d c_{k-1} / d xi_k`` (row block ``k - 1``)

so ``A_super[0]`` is the initial-condition block ``[I 0]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .blockla import BlockDiagMatrix
from .exceptions import DerivativeCheckError, DimensionMismatch
from .validation import check_block, check_vector

ACTIVE_EPS = 1e-6
THETA_FD_STEP = 1e-6
HESSIAN_FD_STEP = 1e-5

_EMPTY = np.zeros(0)


def _empty_jac(rows, cols):
    return np.zeros((rows, cols))


class OcpDefinition:
    """A parametric OCP given through per-stage callbacks with Jacobians.

    Subclasses override the callbacks below. Stage ``k`` runs over
    ``0..N``; ``k == N`` is the terminal stage, whose ``xi_k`` is ``x_N``.
    The stage cost is ``0.5 * ||residual||^2``.

    ``theta_free_constraints`` declares that the constraint Jacobians do not
    depend on theta (constraint values still may), which lets the
    Gauss-Newton cross block skip its finite-difference term.
    """

    theta_free_constraints = False

    def __init__(self, N, nx, nu, ntheta, x_init=None):
        self.N = int(N)
        self.nx = int(nx)
        self.nu = int(nu)
        self.ntheta = int(ntheta)
        self.x_init = None if x_init is None else check_vector(x_init, self.nx, "x_init")

    # -- callbacks -----------------------------------------------------------

    def residual(self, k, xi_k, theta):
        """Return ``(phi, d phi / d xi_k, d phi / d theta)``."""
        raise NotImplementedError

    def dynamics(self, k, x, u, theta):
        """Return ``(f, f_x, f_u, f_theta)`` for ``x_{k+1} = f_k(x_k, u_k; theta)``."""
        raise NotImplementedError

    def inequality(self, k, xi_k, theta):
        """Return ``(g, d g / d xi_k, d g / d theta)`` for ``g_k <= 0``."""
        n = xi_k.shape[0]
        return _EMPTY, _empty_jac(0, n), _empty_jac(0, self.ntheta)

    def equality(self, k, xi_k, theta):
        """Return ``(h, d h / d xi_k, d h / d theta)`` for ``h_k = 0``."""
        n = xi_k.shape[0]
        return _EMPTY, _empty_jac(0, n), _empty_jac(0, self.ntheta)

    def cost_cross(self, k, xi_k, theta):
        """Optional exact ``d/d theta`` of the stage-cost gradient (``n_xi x ntheta``).

        Returning ``None`` selects the Gauss-Newton cross term
        ``J_xi^T J_theta``.
        """
        return None

    # -- layout --------------------------------------------------------------

    @property
    def xi_dims(self) -> list[int]:
        return [self.nx + self.nu] * self.N + [self.nx]

    @property
    def n_xi(self) -> int:
        return self.N * (self.nx + self.nu) + self.nx

    def split_xi(self, xi):
        xi = np.asarray(xi, dtype=np.float64)
        if xi.shape != (self.n_xi,):
            raise DimensionMismatch(f"xi must have length {self.n_xi}, got {xi.shape}")
        step = self.nx + self.nu
        blocks = [xi[k * step:(k + 1) * step] for k in range(self.N)]
        blocks.append(xi[self.N * step:])
        return blocks

    def stack_xi(self, states, controls):
        states = np.asarray(states, dtype=np.float64).reshape(self.N + 1, self.nx)
        controls = np.asarray(controls, dtype=np.float64).reshape(self.N, self.nu)
        parts = [np.concatenate([states[k], controls[k]]) for k in range(self.N)]
        parts.append(states[self.N])
        return np.concatenate(parts)

    def unstack_xi(self, xi):
        blocks = self.split_xi(xi)
        states = np.array([b[: self.nx] for b in blocks])
        controls = np.array([b[self.nx:] for b in blocks[:-1]]).reshape(self.N, self.nu)
        return states, controls

    def rollout(self, x_init, controls, theta):
        """Stacked trajectory from simulating ``controls`` forward from ``x_init``."""
        x = np.asarray(x_init, dtype=np.float64)
        states = [x]
        for k in range(self.N):
            x = self.dynamics(k, x, controls[k], theta)[0]
            states.append(x)
        return self.stack_xi(states, controls)


# ---------------------------------------------------------------------------
# trajectories and systems


@dataclass(frozen=True)
class SolvedTrajectory:
    """Primal-dual solution of an OCP for one parameter vector.

    ``lam`` follows the stacked constraint order for ``active_mask``;
    ``kkt_residual`` is the infinity norm of the stacked KKT residual.
    """

    xi: np.ndarray
    lam: np.ndarray
    active_mask: tuple
    kkt_residual: float
    theta: Optional[np.ndarray] = None
    x_init: Optional[np.ndarray] = None
    iterations: int = 0


@dataclass(frozen=True)
class DiffKktSystem:
    """Structured blocks of ``[[H, A^T], [A, 0]] [dxi; -dlam] = -[B; C]``."""

    H: BlockDiagMatrix
    A_diag: tuple
    A_super: tuple
    B: tuple
    C: tuple
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        H = self.H if isinstance(self.H, BlockDiagMatrix) else BlockDiagMatrix(tuple(self.H))
        object.__setattr__(self, "H", H)
        n_stage = len(H)
        A_diag = tuple(check_block(a, f"A_diag {k}") for k, a in enumerate(self.A_diag))
        A_super = tuple(check_block(a, f"A_super {k}") for k, a in enumerate(self.A_super))
        B = tuple(check_block(b, f"B {k}") for k, b in enumerate(self.B))
        C = tuple(check_block(c, f"C {i - 1}") for i, c in enumerate(self.C))
        if not (len(A_diag) == len(A_super) == len(B) == n_stage and len(C) == n_stage + 1):
            raise DimensionMismatch("block counts must be N+1 per stage and N+2 constraint row blocks")
        xi_dims = H.sizes
        row_dims = [a.shape[0] for a in A_super] + [A_diag[-1].shape[0]]
        ntheta = B[0].shape[1]
        for k in range(n_stage):
            if A_super[k].shape[1] != xi_dims[k] or A_diag[k].shape[1] != xi_dims[k]:
                raise DimensionMismatch(f"A blocks of stage {k} must have {xi_dims[k]} columns")
            if A_diag[k].shape[0] != row_dims[k + 1]:
                raise DimensionMismatch(f"A_diag {k} rows disagree with A_super {k + 1}")
            if B[k].shape != (xi_dims[k], ntheta):
                raise DimensionMismatch(f"B {k} must be {(xi_dims[k], ntheta)}, got {B[k].shape}")
        for i, c in enumerate(C):
            if c.shape != (row_dims[i], ntheta):
                raise DimensionMismatch(f"C {i - 1} must be {(row_dims[i], ntheta)}, got {c.shape}")
        object.__setattr__(self, "A_diag", A_diag)
        object.__setattr__(self, "A_super", A_super)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def N(self) -> int:
        return len(self.H) - 1

    @property
    def ntheta(self) -> int:
        return self.B[0].shape[1]

    @property
    def xi_dims(self) -> list[int]:
        return self.H.sizes

    @property
    def row_dims(self) -> list[int]:
        return [a.shape[0] for a in self.A_super] + [self.A_diag[-1].shape[0]]

    @property
    def size(self) -> int:
        """Dimension of the full saddle-point system."""
        return sum(self.xi_dims) + sum(self.row_dims)

    def A_dense(self) -> np.ndarray:
        xo = np.concatenate([[0], np.cumsum(self.xi_dims)])
        ro = np.concatenate([[0], np.cumsum(self.row_dims)])
        A = np.zeros((ro[-1], xo[-1]))
        for k in range(len(self.H)):
            A[ro[k]:ro[k + 1], xo[k]:xo[k + 1]] = self.A_super[k]
            A[ro[k + 1]:ro[k + 2], xo[k]:xo[k + 1]] = self.A_diag[k]
        return A

    def to_dense(self):
        """Dense ``(H, A, B, C)``."""
        return self.H.to_dense(), self.A_dense(), np.vstack(self.B), np.vstack(self.C)


# ---------------------------------------------------------------------------
# linearization


@dataclass
class StageEval:
    phi: np.ndarray
    J: np.ndarray
    Jt: np.ndarray
    g: np.ndarray
    G: np.ndarray
    Gt: np.ndarray
    h: np.ndarray
    Hx: np.ndarray
    Ht: np.ndarray
    f: Optional[np.ndarray] = None
    F: Optional[np.ndarray] = None
    Ft: Optional[np.ndarray] = None


def evaluate_stage(ocp: OcpDefinition, k, xi_k, theta, with_cost=True) -> StageEval:
    if with_cost:
        phi, J, Jt = ocp.residual(k, xi_k, theta)
    else:
        phi = J = Jt = None
    g, G, Gt = ocp.inequality(k, xi_k, theta)
    h, Hx, Ht = ocp.equality(k, xi_k, theta)
    ev = StageEval(phi, J, Jt, np.asarray(g, dtype=np.float64), G, Gt, np.asarray(h, dtype=np.float64), Hx, Ht)
    if k < ocp.N:
        x, u = xi_k[: ocp.nx], xi_k[ocp.nx:]
        f, fx, fu, ft = ocp.dynamics(k, x, u, theta)
        ev.f = np.asarray(f, dtype=np.float64)
        ev.F = np.hstack([fx, fu])
        ev.Ft = np.asarray(ft, dtype=np.float64).reshape(ocp.nx, ocp.ntheta)
    return ev


def evaluate(ocp, xi_blocks, theta, with_cost=True):
    return [evaluate_stage(ocp, k, xi_blocks[k], theta, with_cost) for k in range(ocp.N + 1)]


def detect_active_set(g_values, eps: float = ACTIVE_EPS):
    """Per-stage masks marking inequality rows with ``g >= -eps`` as active."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return tuple(np.asarray(g, dtype=np.float64) >= -eps for g in g_values)


def row_dims_for(ocp: OcpDefinition, mask, evals=None, xi_blocks=None, theta=None):
    """Constraint row counts per row block ``-1..N`` for a given active mask."""
    dims = [ocp.nx]
    for k in range(ocp.N + 1):
        if evals is not None:
            n_h = evals[k].h.shape[0]
        else:
            n_h = ocp.equality(k, xi_blocks[k], theta)[0].shape[0]
        rows = int(np.count_nonzero(mask[k])) + n_h + (ocp.nx if k < ocp.N else 0)
        dims.append(rows)
    return dims


def constraint_blocks(ocp: OcpDefinition, evals, mask, xi_blocks, x_init):
    """Constraint values per row block and the ``A_diag``/``A_super``/``C`` blocks."""
    nx, N = ocp.nx, ocp.N
    values = [xi_blocks[0][:nx] - x_init]
    A_diag, A_super, C = [], [], [np.zeros((nx, ocp.ntheta))]
    super0 = np.zeros((nx, ocp.xi_dims[0]))
    super0[:, :nx] = np.eye(nx)
    A_super.append(super0)
    for k in range(N + 1):
        ev = evals[k]
        m = mask[k]
        vals = [ev.g[m], ev.h]
        jac = [ev.G[m], ev.Hx]
        tjac = [ev.Gt[m], ev.Ht]
        if k < N:
            vals.append(ev.f - xi_blocks[k + 1][:nx])
            jac.append(ev.F)
            tjac.append(ev.Ft)
        values.append(np.concatenate(vals))
        A_diag.append(np.vstack(jac))
        C.append(np.vstack(tjac))
        if k < N:
            rows = A_diag[-1].shape[0]
            sup = np.zeros((rows, ocp.xi_dims[k + 1]))
            sup[rows - nx:, :nx] = -np.eye(nx)
            A_super.append(sup)
    return values, A_diag, A_super, C


def split_rows(vec, row_dims):
    offs = np.concatenate([[0], np.cumsum(row_dims)])
    return [vec[offs[i]:offs[i + 1]] for i in range(len(row_dims))]


def _lagrangian_grads(evals, A_diag, A_super, lam_blocks):
    grads = []
    for k, ev in enumerate(evals):
        gk = ev.J.T @ ev.phi + A_diag[k].T @ lam_blocks[k + 1] + A_super[k].T @ lam_blocks[k]
        grads.append(gk)
    return grads


def _x_init(ocp, traj):
    if traj.x_init is not None:
        return np.asarray(traj.x_init, dtype=np.float64)
    if ocp.x_init is None:
        raise ValueError("x_init is needed either on the trajectory or the OCP")
    return ocp.x_init


def gauss_newton_hessian(ocp: OcpDefinition, traj: SolvedTrajectory, theta) -> BlockDiagMatrix:
    """``diag(J_0^T J_0, ..., J_N^T J_N)`` from residual Jacobians only."""
    theta = np.asarray(theta, dtype=np.float64)
    blocks = []
    for k, xi_k in enumerate(ocp.split_xi(traj.xi)):
        _, J, _ = ocp.residual(k, xi_k, theta)
        J = np.asarray(J, dtype=np.float64).reshape(-1, xi_k.shape[0])
        Hk = J.T @ J
        blocks.append(0.5 * (Hk + Hk.T))
    return BlockDiagMatrix(tuple(blocks))


def _gn_cross(ocp, k, xi_k, theta, ev):
    override = ocp.cost_cross(k, xi_k, theta)
    if override is not None:
        return np.asarray(override, dtype=np.float64)
    return ev.J.T @ ev.Jt


def _constraint_theta_term(ocp, k, xi_k, theta, mask_k, lam_k):
    """Central differences over theta of ``(d c_k / d xi_k)^T lam_k``."""
    n = xi_k.shape[0]
    out = np.zeros((n, ocp.ntheta))
    if lam_k.size == 0:
        return out
    for j in range(ocp.ntheta):
        h = THETA_FD_STEP * (1.0 + abs(theta[j]))
        cols = []
        for sgn in (1.0, -1.0):
            th = theta.copy()
            th[j] += sgn * h
            ev = evaluate_stage(ocp, k, xi_k, th, with_cost=False)
            jac = [ev.G[mask_k], ev.Hx]
            if k < ocp.N:
                jac.append(ev.F)
            cols.append(np.vstack(jac).T @ lam_k)
        out[:, j] = (cols[0] - cols[1]) / (2.0 * h)
    return out


def _stage_lagrangian_grad(ocp, k, xi_k, theta, mask_k, lam_prev, lam_k):
    ev = evaluate_stage(ocp, k, xi_k, theta)
    jac = [ev.G[mask_k], ev.Hx]
    if k < ocp.N:
        jac.append(ev.F)
    grad = ev.J.T @ ev.phi + np.vstack(jac).T @ lam_k
    if k > 0:
        grad[: ocp.nx] -= lam_prev[lam_prev.shape[0] - ocp.nx:]
    else:
        grad[: ocp.nx] += lam_prev
    return grad


def _exact_fd_blocks(ocp, k, xi_k, theta, mask_k, lam_prev, lam_k):
    n = xi_k.shape[0]
    Hk = np.zeros((n, n))
    for i in range(n):
        h = HESSIAN_FD_STEP * (1.0 + abs(xi_k[i]))
        xp, xm = xi_k.copy(), xi_k.copy()
        xp[i] += h
        xm[i] -= h
        gp = _stage_lagrangian_grad(ocp, k, xp, theta, mask_k, lam_prev, lam_k)
        gm = _stage_lagrangian_grad(ocp, k, xm, theta, mask_k, lam_prev, lam_k)
        Hk[:, i] = (gp - gm) / (2.0 * h)
    Bk = np.zeros((n, ocp.ntheta))
    for j in range(ocp.ntheta):
        h = THETA_FD_STEP * (1.0 + abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        gp = _stage_lagrangian_grad(ocp, k, xi_k, tp, mask_k, lam_prev, lam_k)
        gm = _stage_lagrangian_grad(ocp, k, xi_k, tm, mask_k, lam_prev, lam_k)
        Bk[:, j] = (gp - gm) / (2.0 * h)
    return 0.5 * (Hk + Hk.T), Bk


def assemble_dkkt(
    ocp: OcpDefinition,
    traj: SolvedTrajectory,
    theta,
    eps: Optional[float] = None,
    hessian_mode: str = "gauss_newton",
) -> DiffKktSystem:
    """Build ``(H, A, B, C)`` at a solved trajectory.

    ``hessian_mode="gauss_newton"`` uses ``J^T J`` blocks and the cross term
    ``J_xi^T J_theta`` (or :meth:`OcpDefinition.cost_cross`) plus central
    differences over theta of the constraint term. ``"exact_fd"`` builds the
    Lagrangian Hessian and cross blocks by central differences of the
    Lagrangian gradient; it is the slow reference.

    The active set comes from ``traj.active_mask``; when that is ``None`` it
    is detected from the inequality values with threshold ``eps``.
    """
    if hessian_mode not in ("gauss_newton", "exact_fd"):
        raise ValueError(f"unknown hessian_mode {hessian_mode!r}")
    theta = np.asarray(theta, dtype=np.float64)
    xi_blocks = ocp.split_xi(traj.xi)
    evals = evaluate(ocp, xi_blocks, theta)
    mask = traj.active_mask
    if mask is None:
        mask = detect_active_set([ev.g for ev in evals], ACTIVE_EPS if eps is None else eps)
    _, A_diag, A_super, C = constraint_blocks(ocp, evals, mask, xi_blocks, _x_init(ocp, traj))
    row_dims = [a.shape[0] for a in A_super] + [A_diag[-1].shape[0]]
    lam = np.asarray(traj.lam, dtype=np.float64)
    if lam.shape[0] != sum(row_dims):
        raise DimensionMismatch(f"lambda has {lam.shape[0]} entries, constraints have {sum(row_dims)} rows")
    lam_blocks = split_rows(lam, row_dims)

    H_blocks, B_blocks = [], []
    for k, ev in enumerate(evals):
        if hessian_mode == "gauss_newton":
            Hk = ev.J.T @ ev.J
            H_blocks.append(0.5 * (Hk + Hk.T))
            Bk = _gn_cross(ocp, k, xi_blocks[k], theta, ev)
            if not ocp.theta_free_constraints:
                Bk = Bk + _constraint_theta_term(ocp, k, xi_blocks[k], theta, mask[k], lam_blocks[k + 1])
            B_blocks.append(Bk)
        else:
            Hk, Bk = _exact_fd_blocks(ocp, k, xi_blocks[k], theta, mask[k], lam_blocks[k], lam_blocks[k + 1])
            H_blocks.append(Hk)
            B_blocks.append(Bk)
    return DiffKktSystem(
        BlockDiagMatrix(tuple(H_blocks)),
        tuple(A_diag),
        tuple(A_super),
        tuple(B_blocks),
        tuple(C),
        meta={"hessian_mode": hessian_mode},
    )


def kkt_residual_parts(ocp: OcpDefinition, traj: SolvedTrajectory, theta):
    """``(stationarity, primal)`` infinity norms over the active rows."""
    theta = np.asarray(theta, dtype=np.float64)
    xi_blocks = ocp.split_xi(traj.xi)
    evals = evaluate(ocp, xi_blocks, theta)
    values, A_diag, A_super, _ = constraint_blocks(ocp, evals, traj.active_mask, xi_blocks, _x_init(ocp, traj))
    row_dims = [v.shape[0] for v in values]
    lam_blocks = split_rows(np.asarray(traj.lam, dtype=np.float64), row_dims)
    grads = _lagrangian_grads(evals, A_diag, A_super, lam_blocks)
    stat = max((float(np.max(np.abs(g))) for g in grads if g.size), default=0.0)
    prim = max((float(np.max(np.abs(v))) for v in values if v.size), default=0.0)
    return stat, prim


def kkt_residual(ocp: OcpDefinition, traj: SolvedTrajectory, theta) -> float:
    """Infinity norm of ``[grad J + (grad c)^T lam; c]`` on the active rows."""
    return max(kkt_residual_parts(ocp, traj, theta))


# ---------------------------------------------------------------------------
# derivative checks


def _fd_jac(fun, x, step):
    cols = []
    for i in range(x.shape[0]):
        h = step * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * h))
    return np.array(cols).T.reshape(-1, x.shape[0])


def _rel_err(analytic, fd):
    analytic = np.asarray(analytic, dtype=np.float64).reshape(fd.shape)
    return float(np.linalg.norm(analytic - fd) / max(1.0, np.linalg.norm(fd)))


def check_ocp_derivatives(ocp: OcpDefinition, theta, xi=None, n_points=1, seed=0, rtol=1e-4, step=1e-6):
    """Compare every Jacobian callback with central differences.

    Points are ``xi`` (when given) and random perturbations of it. Returns
    the worst relative error; raises :class:`DerivativeCheckError` above
    ``rtol``.
    """
    rng = np.random.default_rng(seed)
    theta = np.asarray(theta, dtype=np.float64)
    base = np.zeros(ocp.n_xi) if xi is None else np.asarray(xi, dtype=np.float64)
    worst = 0.0
    for p in range(n_points):
        point = base if p == 0 and xi is not None else base + 0.1 * rng.standard_normal(ocp.n_xi)
        for k, xk in enumerate(ocp.split_xi(point)):
            checks = []
            for name, fn in (("residual", ocp.residual), ("inequality", ocp.inequality), ("equality", ocp.equality)):
                val, jx, jt = fn(k, xk, theta)
                checks.append((name + "/xi", jx, _fd_jac(lambda z, fn=fn: fn(k, z, theta)[0], xk, step)))
                checks.append((name + "/theta", jt, _fd_jac(lambda t, fn=fn: fn(k, xk, t)[0], theta, step)))
            if k < ocp.N:
                x, u = xk[: ocp.nx], xk[ocp.nx:]
                f, fx, fu, ft = ocp.dynamics(k, x, u, theta)
                checks.append(("dynamics/x", fx, _fd_jac(lambda z: ocp.dynamics(k, z, u, theta)[0], x, step)))
                checks.append(("dynamics/u", fu, _fd_jac(lambda z: ocp.dynamics(k, x, z, theta)[0], u, step)))
                checks.append(("dynamics/theta", ft, _fd_jac(lambda t: ocp.dynamics(k, x, u, t)[0], theta, step)))
            for name, analytic, fd in checks:
                if fd.size == 0:
                    continue
                err = _rel_err(analytic, fd)
                worst = max(worst, err)
                if err > rtol:
                    raise DerivativeCheckError(f"{name} Jacobian at stage {k} off by {err:.2e}")
    return worst


# ---------------------------------------------------------------------------
# instance files


def _nested(blocks):
    return [np.asarray(b).tolist() for b in blocks]


def _arr2(x, rows=None):
    a = np.array(x, dtype=np.float64)
    if a.size == 0:
        return np.zeros((0 if rows is None else rows, 0)) if a.ndim < 2 else a.reshape(a.shape)
    return a


def save_instance(path, system: Optional[DiffKktSystem] = None, traj: Optional[SolvedTrajectory] = None,
                  dims: Optional[dict] = None, theta=None, x_init=None):
    """Write an OCP/benchmark instance as JSON (nested row-major arrays)."""
    doc = {
        "dims": dims or {},
        "theta": None if theta is None else np.asarray(theta).tolist(),
        "x_init": None if x_init is None else np.asarray(x_init).tolist(),
        "xi": None if traj is None else np.asarray(traj.xi).tolist(),
        "lambda": None if traj is None else np.asarray(traj.lam).tolist(),
        "active_mask": None if traj is None else [np.asarray(m, dtype=bool).tolist() for m in traj.active_mask],
    }
    if system is not None:
        ntheta = system.ntheta
        doc["blocks"] = {
            "H": _nested(system.H.blocks),
            "A_diag": _nested(system.A_diag),
            "A_super": _nested(system.A_super),
            "B": _nested(system.B),
            "C": _nested(system.C),
            "shapes": {
                "xi_dims": system.xi_dims,
                "row_dims": system.row_dims,
                "ntheta": ntheta,
            },
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, allow_nan=False)
    return doc


def load_instance(path):
    """Read an instance file; returns a dict with ``system`` and ``traj`` entries."""
    with open(path) as fh:
        doc = json.load(fh)
    out = dict(doc)
    out["system"] = None
    blocks = doc.get("blocks")
    if blocks:
        shapes = blocks.get("shapes", {})
        xi_dims = shapes.get("xi_dims")
        row_dims = shapes.get("row_dims")
        ntheta = shapes.get("ntheta")

        def shaped(b, r, c):
            a = np.array(b, dtype=np.float64)
            return a.reshape(r, c) if (r is not None and c is not None) else a

        H = [shaped(b, n, n) if xi_dims else np.array(b) for b, n in zip(blocks["H"], xi_dims or [None] * len(blocks["H"]))]
        if xi_dims and row_dims:
            A_diag = [shaped(b, row_dims[k + 1], xi_dims[k]) for k, b in enumerate(blocks["A_diag"])]
            A_super = [shaped(b, row_dims[k], xi_dims[k]) for k, b in enumerate(blocks["A_super"])]
            Bb = [shaped(b, xi_dims[k], ntheta) for k, b in enumerate(blocks["B"])]
            Cb = [shaped(b, row_dims[i], ntheta) for i, b in enumerate(blocks["C"])]
        else:
            A_diag = [np.array(b) for b in blocks["A_diag"]]
            A_super = [np.array(b) for b in blocks["A_super"]]
            Bb = [np.array(b) for b in blocks["B"]]
            Cb = [np.array(b) for b in blocks["C"]]
        out["system"] = DiffKktSystem(BlockDiagMatrix(tuple(H)), tuple(A_diag), tuple(A_super), tuple(Bb), tuple(Cb))
    out["traj"] = None
    if doc.get("xi") is not None:
        out["traj"] = SolvedTrajectory(
            xi=np.array(doc["xi"], dtype=np.float64),
            lam=np.array(doc.get("lambda") or [], dtype=np.float64),
            active_mask=tuple(np.array(m, dtype=bool) for m in (doc.get("active_mask") or [])),
            kkt_residual=float("nan"),
            theta=None if doc.get("theta") is None else np.array(doc["theta"], dtype=np.float64),
            x_init=None if doc.get("x_init") is None else np.array(doc["x_init"], dtype=np.float64),
        )
    return out
