"""Small parametric OCPs with known structure, used by tests and ``verify``.

:class:`LinearQuadraticOcp` has affine dynamics and residuals that are affine
in the decision variables, so its Gauss-Newton Hessian is exact and finite
differences of the forward solution are a valid oracle for the backward
pass. Parameters enter nonlinearly through the dynamics offset and the
tracking target.
"""

from __future__ import annotations

import numpy as np

from .kkt import OcpDefinition
from .validation import check_positive_int


class LinearQuadraticOcp(OcpDefinition):
    """``x_{k+1} = F_x x + F_u u + E sin(theta) + e`` with tracking residuals.

    The stage residual is ``W^{1/2} (xi_k - R_k tanh(theta) - r_k)``. When
    ``u_max`` is given, every control carries the box ``|u| <= u_max``.
    ``equality_rows`` adds that many affine equalities ``M xi_k = m`` on the
    terminal state.
    """

    theta_free_constraints = True

    def __init__(self, Fx, Fu, E, e, W_sqrt, R, r, x_init, u_max=None, eq=None):
        N = len(Fx)
        nx, nu = Fu[0].shape
        super().__init__(N, nx, nu, E[0].shape[1], x_init)
        self.Fx, self.Fu, self.E, self.e = Fx, Fu, E, e
        self.W_sqrt, self.R, self.r = W_sqrt, R, r
        self.u_max = u_max
        self.eq = eq

    def residual(self, k, xi_k, theta):
        t = np.tanh(theta)
        Ws = self.W_sqrt[k]
        phi = Ws @ (xi_k - self.R[k] @ t - self.r[k])
        return phi, Ws.copy(), -Ws @ self.R[k] * (1.0 - t**2)

    def dynamics(self, k, x, u, theta):
        s = np.sin(theta)
        f = self.Fx[k] @ x + self.Fu[k] @ u + self.E[k] @ s + self.e[k]
        return f, self.Fx[k], self.Fu[k], self.E[k] * np.cos(theta)

    def inequality(self, k, xi_k, theta):
        n = xi_k.shape[0]
        if self.u_max is None or k == self.N:
            return super().inequality(k, xi_k, theta)
        u = xi_k[self.nx:]
        G = np.zeros((2 * self.nu, n))
        G[: self.nu, self.nx:] = np.eye(self.nu)
        G[self.nu:, self.nx:] = -np.eye(self.nu)
        g = np.concatenate([u - self.u_max, -u - self.u_max])
        return g, G, np.zeros((2 * self.nu, self.ntheta))

    def equality(self, k, xi_k, theta):
        if self.eq is None or k != self.N:
            return super().equality(k, xi_k, theta)
        M, m = self.eq
        return M @ xi_k - m, M.copy(), np.zeros((M.shape[0], self.ntheta))


def random_lq_ocp(N, nx, nu, ntheta, seed=0, u_max=None, equality_rows=0, weight_range=(0.5, 2.0)):
    """Seeded :class:`LinearQuadraticOcp` with mildly contracting dynamics."""
    N = check_positive_int(N, "N")
    nx = check_positive_int(nx, "nx")
    nu = check_positive_int(nu, "nu")
    ntheta = check_positive_int(ntheta, "ntheta")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    Fx, Fu, E, e, Ws, R, r = [], [], [], [], [], [], []
    for k in range(N + 1):
        n = nx + nu if k < N else nx
        if k < N:
            A = rng.standard_normal((nx, nx))
            A *= 0.9 / max(1.0, np.max(np.abs(np.linalg.eigvals(A))))
            Fx.append(0.5 * (np.eye(nx) + A))
            Fu.append(0.5 * rng.standard_normal((nx, nu)))
            E.append(0.3 * rng.standard_normal((nx, ntheta)))
            e.append(0.1 * rng.standard_normal(nx))
        Ws.append(np.diag(np.sqrt(rng.uniform(*weight_range, size=n))))
        R.append(rng.standard_normal((n, ntheta)))
        r.append(0.5 * rng.standard_normal(n))
    x_init = rng.standard_normal(nx)
    eq = None
    if equality_rows:
        M = rng.standard_normal((equality_rows, nx))
        eq = (M, rng.standard_normal(equality_rows))
    return LinearQuadraticOcp(Fx, Fu, E, e, Ws, R, r, x_init, u_max=u_max, eq=eq)


class ScalarShiftOcp(OcpDefinition):
    """One stage, ``x_1 = x_0 + u_0 + theta`` with cost ``x_0^2 + u_0^2 + x_1^2``.

    With ``x_init`` fixed the optimum is ``u_0 = -(x_0 + theta) / 2`` and
    ``x_1 = (x_0 + theta) / 2``, so ``d x_1 / d theta = 1/2``.
    """

    theta_free_constraints = True

    def __init__(self, x_init=1.0):
        super().__init__(1, 1, 1, 1, np.array([float(x_init)]))

    def residual(self, k, xi_k, theta):
        n = xi_k.shape[0]
        return np.sqrt(2.0) * xi_k, np.sqrt(2.0) * np.eye(n), np.zeros((n, 1))

    def dynamics(self, k, x, u, theta):
        return x + u + theta, np.eye(1), np.eye(1), np.eye(1)


__all__ = ["LinearQuadraticOcp", "random_lq_ocp", "ScalarShiftOcp"]
