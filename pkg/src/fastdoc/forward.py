"""Gauss-Newton SQP forward solver with an active-set treatment of inequalities.

Each iteration linearizes the residuals and constraints, keeps the working
set of inequality rows as equalities and solves the resulting equality
constrained QP with the structured saddle-point solver of :mod:`deriv`.
Inactive rows are guarded by a ratio test on their linearization; working
rows with negative multipliers are released one at a time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockla import BlockDiagMatrix
from .deriv import fastdoc_backward
from .exceptions import (
    ActiveSetChanged,
    InfeasibleActiveSet,
    LineSearchFailure,
    MaxIterations,
)
from .kkt import (
    DiffKktSystem,
    OcpDefinition,
    SolvedTrajectory,
    constraint_blocks,
    evaluate,
    split_rows,
    _lagrangian_grads,
)
from .validation import check_vector

CYCLE_REPEATS = 3
# merit changes below this relative size are roundoff
MERIT_ROUNDOFF = 1e-13


@dataclass(frozen=True)
class SqpSettings:
    max_iter: int = 100
    kkt_tol: float = 1e-8
    backtrack: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-10
    box_eps: float = 1e-8

    def __post_init__(self):
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        for name in ("kkt_tol", "armijo", "min_step", "box_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack must lie in (0, 1)")


class _Linearization:
    """Residuals, constraints and the Gauss-Newton QP at one iterate."""

    def __init__(self, ocp, xi, theta, x_init, mask):
        self.blocks = ocp.split_xi(xi)
        self.evals = evaluate(ocp, self.blocks, theta)
        self.mask = mask
        self.values, self.A_diag, self.A_super, _ = constraint_blocks(ocp, self.evals, mask, self.blocks, x_init)
        self.row_dims = [v.shape[0] for v in self.values]
        self.grad = [ev.J.T @ ev.phi for ev in self.evals]

    def cost(self):
        return 0.5 * sum(float(ev.phi @ ev.phi) for ev in self.evals)

    def system(self) -> DiffKktSystem:
        H = []
        for ev in self.evals:
            Hk = ev.J.T @ ev.J
            H.append(0.5 * (Hk + Hk.T))
        B = [g.reshape(-1, 1) for g in self.grad]
        C = [v.reshape(-1, 1) for v in self.values]
        return DiffKktSystem(BlockDiagMatrix(tuple(H)), tuple(self.A_diag), tuple(self.A_super), tuple(B), tuple(C))

    def solve_qp(self):
        """Step ``d`` and multipliers of ``min 0.5 |phi + J d|^2 s.t. A d + c = 0``."""
        out = fastdoc_backward(self.system(), workers=1)
        return out.dxi_dtheta[:, 0].copy(), -out.dlambda_dtheta[:, 0]

    def stationarity(self, lam):
        grads = _lagrangian_grads(self.evals, self.A_diag, self.A_super, split_rows(lam, self.row_dims))
        return max((float(np.max(np.abs(g))) for g in grads if g.size), default=0.0)

    def primal(self):
        return max((float(np.max(np.abs(v))) for v in self.values if v.size), default=0.0)

    def worst_inactive(self):
        worst = 0.0
        for ev, m in zip(self.evals, self.mask):
            g = ev.g[~m]
            if g.size:
                worst = max(worst, float(np.max(g)))
        return worst


def _merit_terms(ocp, xi, theta, x_init):
    """``(cost, l1 infeasibility)`` of a trajectory over every constraint."""
    blocks = ocp.split_xi(xi)
    evals = evaluate(ocp, blocks, theta)
    cost = 0.5 * sum(float(ev.phi @ ev.phi) for ev in evals)
    viol = float(np.sum(np.abs(blocks[0][: ocp.nx] - x_init)))
    for k, ev in enumerate(evals):
        viol += float(np.sum(np.maximum(ev.g, 0.0))) + float(np.sum(np.abs(ev.h)))
        if k < ocp.N:
            viol += float(np.sum(np.abs(ev.f - blocks[k + 1][: ocp.nx])))
    return cost, viol


def _ineq_multipliers(lin: _Linearization, lam):
    """Multipliers of the working-set rows, per stage, in inequality order."""
    lam_blocks = split_rows(lam, lin.row_dims)
    return [lam_blocks[k + 1][: int(np.count_nonzero(m))] for k, m in enumerate(lin.mask)]


def _ratio_test(lin: _Linearization, d, ocp):
    """Largest step in ``(0, 1]`` keeping linearized inactive rows feasible."""
    alpha, hit = 1.0, None
    for k, (ev, m) in enumerate(zip(lin.evals, lin.mask)):
        if ev.g.size == 0:
            continue
        dk = d[k * (ocp.nx + ocp.nu): k * (ocp.nx + ocp.nu) + lin.blocks[k].shape[0]]
        slope = ev.G @ dk
        for i in np.flatnonzero(~m):
            if slope[i] > 0.0:
                a = max(0.0, -ev.g[i]) / slope[i]
                if a < alpha:
                    alpha, hit = a, (k, int(i))
    return alpha, hit


def _mask_key(mask):
    return b"".join(np.packbits(m).tobytes() + bytes([m.size % 256]) for m in mask)


def solve_ocp(
    ocp: OcpDefinition,
    theta,
    x_init=None,
    settings: SqpSettings = SqpSettings(),
    xi0=None,
    active0=None,
) -> SolvedTrajectory:
    """Solve the OCP at ``theta`` from ``x_init``.

    The default initial guess is a rollout of zero controls and the default
    working set is empty; ``xi0`` and ``active0`` warm-start both. Raises
    :class:`MaxIterations`, :class:`LineSearchFailure` or
    :class:`InfeasibleActiveSet`.
    """
    theta = check_vector(theta, ocp.ntheta, "theta")
    if x_init is None:
        x_init = ocp.x_init
    x_init = check_vector(x_init, ocp.nx, "x_init")
    if xi0 is None:
        xi = ocp.rollout(x_init, np.zeros((ocp.N, ocp.nu)), theta)
    else:
        xi = check_vector(xi0, ocp.n_xi, "xi0").copy()
    blocks = ocp.split_xi(xi)
    if active0 is None:
        mask = tuple(np.zeros(_n_ineq(ocp, k, blocks[k], theta), dtype=bool) for k in range(ocp.N + 1))
    else:
        mask = tuple(np.array(m, dtype=bool) for m in active0)

    rho = 1.0
    seen = {_mask_key(mask): 1}
    residual = np.inf
    steps = 0
    for _ in range(settings.max_iter + 1):
        lin = _Linearization(ocp, xi, theta, x_init, mask)
        d, lam = lin.solve_qp()
        ineq = _ineq_multipliers(lin, lam)
        residual = max(lin.stationarity(lam), lin.primal())
        worst_dual = min((float(np.min(l)) for l in ineq if l.size), default=0.0)
        feasible = lin.worst_inactive() <= settings.box_eps
        if residual <= settings.kkt_tol and feasible:
            if worst_dual >= -settings.kkt_tol:
                return SolvedTrajectory(xi, lam, mask, residual, theta.copy(), x_init.copy(), steps)
            mask = _release(mask, ineq)
            _count(seen, mask)
            continue
        if steps == settings.max_iter:
            break

        alpha_max, hit = _ratio_test(lin, d, ocp)
        if alpha_max < settings.min_step and hit is not None:
            mask = _add(mask, hit)
            _count(seen, mask)
            continue

        rho = max(rho, 2.0 * float(np.max(np.abs(lam), initial=0.0)))
        cost0, viol0 = _merit_terms(ocp, xi, theta, x_init)
        merit0 = cost0 + rho * viol0
        slope = float(np.concatenate(lin.grad) @ d) - rho * viol0
        alpha = alpha_max
        slack = MERIT_ROUNDOFF * (1.0 + abs(merit0))
        while True:
            cost1, viol1 = _merit_terms(ocp, xi + alpha * d, theta, x_init)
            merit1 = cost1 + rho * viol1
            if merit1 <= merit0 + settings.armijo * alpha * min(slope, 0.0) + slack:
                break
            alpha *= settings.backtrack
            if alpha < settings.min_step:
                raise LineSearchFailure(f"no sufficient decrease down to step {alpha:.2e} (merit {merit0:.3e})")
        xi = xi + alpha * d
        steps += 1
        if hit is not None and alpha == alpha_max:
            mask = _add(mask, hit)
            _count(seen, mask)
        # rows pushed past their bound by curvature join the working set
        mask = _absorb_violations(ocp, xi, theta, mask, settings.box_eps)
    raise MaxIterations(
        f"SQP stopped after {settings.max_iter} steps with KKT residual {residual:.3e}",
        residual=residual,
        iterations=steps,
    )


def _n_ineq(ocp, k, xi_k, theta):
    return np.asarray(ocp.inequality(k, xi_k, theta)[0]).shape[0]


def _count(seen, mask):
    key = _mask_key(mask)
    seen[key] = seen.get(key, 0) + 1
    if seen[key] >= CYCLE_REPEATS:
        raise InfeasibleActiveSet(f"working set revisited {seen[key]} times; active-set iteration is cycling")


def _add(mask, hit):
    k, i = hit
    out = [m.copy() for m in mask]
    out[k][i] = True
    return tuple(out)


def _release(mask, ineq):
    k_min, i_min, v_min = None, None, 0.0
    for k, l in enumerate(ineq):
        if l.size:
            i = int(np.argmin(l))
            if l[i] < v_min:
                k_min, i_min, v_min = k, i, float(l[i])
    out = [m.copy() for m in mask]
    rows = np.flatnonzero(out[k_min])
    out[k_min][rows[i_min]] = False
    return tuple(out)


def _absorb_violations(ocp, xi, theta, mask, eps):
    blocks = ocp.split_xi(xi)
    out = None
    for k in range(ocp.N + 1):
        g = np.asarray(ocp.inequality(k, blocks[k], theta)[0])
        new = (g > eps) & ~mask[k]
        if np.any(new):
            out = out or [m.copy() for m in mask]
            out[k] |= new
    return mask if out is None else tuple(out)


def fd_sensitivity_oracle(ocp: OcpDefinition, theta, x_init=None, settings: SqpSettings = SqpSettings(), step=1e-5):
    """Central differences of the solution trajectory over theta.

    Perturbed solves are warm-started from the nominal solution and its
    working set. Raises :class:`ActiveSetChanged` when any perturbed solve
    ends with a different active set.
    """
    theta = check_vector(theta, ocp.ntheta, "theta")
    base = solve_ocp(ocp, theta, x_init, settings)
    ref = _mask_key(base.active_mask)
    cols = []
    for j in range(ocp.ntheta):
        h = step * (1.0 + abs(theta[j]))
        sol = []
        for sgn in (1.0, -1.0):
            th = theta.copy()
            th[j] += sgn * h
            s = solve_ocp(ocp, th, base.x_init, settings, xi0=base.xi, active0=base.active_mask)
            if _mask_key(s.active_mask) != ref:
                raise ActiveSetChanged(f"perturbing theta[{j}] by {sgn * h:+.2e} changes the active set")
            sol.append(s.xi)
        cols.append((sol[0] - sol[1]) / (2.0 * h))
    if not cols:
        return np.zeros((ocp.n_xi, 0))
    return np.column_stack(cols)


__all__ = ["SqpSettings", "solve_ocp", "fd_sensitivity_oracle"]
