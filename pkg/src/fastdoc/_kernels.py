"""Compiled per-block kernels: Cholesky and partial-pivoting LU with substitutions.

Both families are written in the same row-oriented style so that timing
comparisons between them reflect the arithmetic, not the implementation.
Every kernel adds its floating-point operation count (multiplications,
additions, divisions and square roots) to ``counts``: slot 0 for the
factorization, slot 1 for substitutions.
"""

import numpy as np
from numba import njit

# reassociation lets LLVM vectorize the inner reductions; NaN/Inf
# semantics stay strict so the pivot tests keep rejecting NaN
_FM = {"reassoc", "contract", "arcp", "nsz"}

FACTOR = 0
SUBST = 1


@njit(cache=True, nogil=True, fastmath=_FM)
def chol_lower(a, L, pivot_tol, counts):
    """Row-by-row Cholesky ``a = L L^T``; returns the failing row or -1."""
    n = a.shape[0]
    flops = 0
    for i in range(n):
        for j in range(i):
            s = a[i, j]
            for m in range(j):
                s -= L[i, m] * L[j, m]
            L[i, j] = s / L[j, j]
            flops += 2 * j + 1
        s = a[i, i]
        for m in range(i):
            s -= L[i, m] * L[i, m]
        flops += 2 * i + 1
        # also rejects NaN
        if not s > pivot_tol:
            counts[FACTOR] += flops
            L[i, i] = s
            return i
        L[i, i] = np.sqrt(s)
    counts[FACTOR] += flops
    return -1


@njit(cache=True, nogil=True, fastmath=_FM)
def lower_solve(L, B, counts):
    """In place ``B <- L^{-1} B`` for lower-triangular ``L``."""
    n = L.shape[0]
    k = B.shape[1]
    for i in range(n):
        for m in range(i):
            lim = L[i, m]
            for c in range(k):
                B[i, c] -= lim * B[m, c]
        inv = 1.0 / L[i, i]
        for c in range(k):
            B[i, c] *= inv
    counts[SUBST] += k * n * n


@njit(cache=True, nogil=True, fastmath=_FM)
def lower_t_solve(L, B, counts):
    """In place ``B <- L^{-T} B`` for lower-triangular ``L``."""
    n = L.shape[0]
    k = B.shape[1]
    for i in range(n - 1, -1, -1):
        for m in range(i + 1, n):
            lmi = L[m, i]
            for c in range(k):
                B[i, c] -= lmi * B[m, c]
        inv = 1.0 / L[i, i]
        for c in range(k):
            B[i, c] *= inv
    counts[SUBST] += k * n * n


@njit(cache=True, nogil=True, fastmath=_FM)
def lower_inverse(L, Y, counts):
    """Forward substitution ``L Y = I`` exploiting the triangular right-hand side."""
    n = L.shape[0]
    flops = 0
    for i in range(n):
        for c in range(n):
            Y[i, c] = 0.0
        for m in range(i):
            lim = L[i, m]
            for c in range(m + 1):
                Y[i, c] -= lim * Y[m, c]
            flops += 2 * (m + 1)
        Y[i, i] += 1.0
        inv = 1.0 / L[i, i]
        for c in range(i + 1):
            Y[i, c] *= inv
        flops += i + 1
    counts[SUBST] += flops


@njit(cache=True, nogil=True, fastmath=_FM)
def lu_factor(a, LU, piv, pivot_tol, counts):
    """Doolittle LU with partial pivoting, ``P a = L U``; returns failing column or -1."""
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            LU[i, j] = a[i, j]
    flops = 0
    for k in range(n):
        p = k
        big = abs(LU[k, k])
        for i in range(k + 1, n):
            v = abs(LU[i, k])
            if v > big:
                big = v
                p = i
        piv[k] = p
        if p != k:
            for j in range(n):
                t = LU[k, j]
                LU[k, j] = LU[p, j]
                LU[p, j] = t
        if not big > pivot_tol:
            counts[FACTOR] += flops
            return k
        inv = 1.0 / LU[k, k]
        for i in range(k + 1, n):
            lik = LU[i, k] * inv
            LU[i, k] = lik
            for j in range(k + 1, n):
                LU[i, j] -= lik * LU[k, j]
        r = n - k - 1
        flops += r * (2 * r + 1)
    counts[FACTOR] += flops
    return -1


@njit(cache=True, nogil=True, fastmath=_FM)
def lu_solve(LU, piv, B, counts):
    """In place ``B <- A^{-1} B`` from the packed factors of ``P A = L U``."""
    n = LU.shape[0]
    k = B.shape[1]
    for r in range(n):
        p = piv[r]
        if p != r:
            for c in range(k):
                t = B[r, c]
                B[r, c] = B[p, c]
                B[p, c] = t
    for i in range(n):
        for m in range(i):
            lim = LU[i, m]
            for c in range(k):
                B[i, c] -= lim * B[m, c]
    for i in range(n - 1, -1, -1):
        for m in range(i + 1, n):
            uim = LU[i, m]
            for c in range(k):
                B[i, c] -= uim * B[m, c]
        inv = 1.0 / LU[i, i]
        for c in range(k):
            B[i, c] *= inv
    counts[SUBST] += 2 * k * n * n


@njit(cache=True, nogil=True, fastmath=_FM)
def lu_triangular_inverses(LU, Linv, Uinv, counts):
    """Inverses of the unit-lower and upper factors packed in ``LU``."""
    n = LU.shape[0]
    flops = 0
    for i in range(n):
        for c in range(n):
            Linv[i, c] = 0.0
        for m in range(i):
            lim = LU[i, m]
            for c in range(m + 1):
                Linv[i, c] -= lim * Linv[m, c]
            flops += 2 * (m + 1)
        Linv[i, i] += 1.0
    for i in range(n - 1, -1, -1):
        for c in range(n):
            Uinv[i, c] = 0.0
        Uinv[i, i] = 1.0
        for m in range(i + 1, n):
            uim = LU[i, m]
            for c in range(m, n):
                Uinv[i, c] -= uim * Uinv[m, c]
            flops += 2 * (n - m)
        inv = 1.0 / LU[i, i]
        for c in range(i, n):
            Uinv[i, c] *= inv
        flops += n - i
    counts[SUBST] += flops


@njit(cache=True, nogil=True, fastmath=_FM)
def undo_column_pivots(X, piv):
    """Right-multiply by the row permutation recorded in ``piv``."""
    n = X.shape[0]
    for k in range(n - 1, -1, -1):
        p = piv[k]
        if p != k:
            for r in range(n):
                t = X[r, k]
                X[r, k] = X[r, p]
                X[r, p] = t


@njit(cache=True, nogil=True, fastmath=_FM)
def lower_gram(Y, X, counts):
    """``X = Y^T Y`` for lower-triangular ``Y``; fills both triangles."""
    n = Y.shape[0]
    for i in range(n):
        for j in range(n):
            X[i, j] = 0.0
    flops = 0
    for m in range(n):
        for i in range(m + 1):
            y = Y[m, i]
            for j in range(i + 1):
                X[i, j] += y * Y[m, j]
            flops += 2 * (i + 1)
    for i in range(n):
        for j in range(i):
            X[j, i] = X[i, j]
    counts[SUBST] += flops


@njit(cache=True, nogil=True, fastmath=_FM)
def upper_lower_product(Uinv, Linv, X, counts):
    """``X = Uinv Linv`` for upper ``Uinv`` and unit-lower ``Linv``."""
    n = Uinv.shape[0]
    flops = 0
    for i in range(n):
        for j in range(n):
            X[i, j] = 0.0
        for m in range(i, n):
            u = Uinv[i, m]
            for j in range(m + 1):
                X[i, j] += u * Linv[m, j]
            flops += 2 * (m + 1)
    counts[SUBST] += flops


@njit(cache=True, nogil=True)
def _max_abs_diag(a):
    big = 0.0
    for i in range(a.shape[0]):
        v = abs(a[i, i])
        if v > big:
            big = v
    return big


# regularization parameters packed as
# [enabled, rel, floor, growth, escalations, pivot_rtol]
@njit(cache=True, nogil=True)
def chol_regularized(a, L, reg, counts):
    """Cholesky with escalating diagonal shifts.

    Returns ``(failing_row, shift, last_pivot)``; ``failing_row`` is -1 on
    success. ``L`` must be zero above the diagonal on entry.
    """
    n = a.shape[0]
    bad = chol_lower(a, L, reg[5] * _max_abs_diag(a), counts)
    if bad < 0:
        return -1, 0.0, 0.0
    pivot = L[bad, bad]
    if reg[0] == 0.0:
        return bad, 0.0, pivot
    tr = 0.0
    for i in range(n):
        tr += a[i, i]
    mu = max(reg[2], reg[1] * abs(tr) / max(n, 1))
    shifted = a.copy()
    for _ in range(int(reg[4]) + 1):
        for i in range(n):
            shifted[i, i] = a[i, i] + mu
        for i in range(n):
            for j in range(n):
                L[i, j] = 0.0
        bad = chol_lower(shifted, L, reg[5] * _max_abs_diag(shifted), counts)
        if bad < 0:
            return -1, mu, 0.0
        pivot = L[bad, bad]
        mu *= reg[3]
    return bad, mu / reg[3], pivot


@njit(cache=True, nogil=True)
def _view(buf, off, k, r, c):
    return buf[off[k]:off[k] + r * c].reshape((r, c))


@njit(cache=True, nogil=True)
def _mm(a, b):
    """``a @ b`` that tolerates empty operands."""
    if a.shape[0] == 0 or a.shape[1] == 0 or b.shape[1] == 0:
        return np.zeros((a.shape[0], b.shape[1]))
    return np.dot(a, b)


@njit(cache=True, nogil=True)
def _max_abs(a):
    big = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            v = abs(a[i, j])
            if v > big:
                big = v
    return big


@njit(cache=True, nogil=True)
def invert_into(a, X, method, reg, counts):
    """``X = a^{-1}`` by Cholesky (``method`` 0) or partial-pivoting LU (1).

    Cholesky: factor, ``Y = L^{-1}`` by forward substitution, ``X = Y^T Y``.
    LU: factor, both triangular inverses, ``X = U^{-1} L^{-1} P``.
    Returns ``(failing_row, shift, pivot)`` with ``failing_row == -1`` on
    success; factorization flops go to ``counts[FACTOR]``.
    """
    n = a.shape[0]
    if method == 0:
        L = np.zeros((n, n))
        bad, mu, pivot = chol_regularized(a, L, reg, counts)
        if bad >= 0:
            return bad, mu, pivot
        Y = np.empty((n, n))
        lower_inverse(L, Y, counts)
        lower_gram(Y, X, counts)
        return -1, mu, 0.0
    LU = np.empty((n, n))
    piv = np.empty(n, dtype=np.int64)
    bad = lu_factor(a, LU, piv, reg[5] * _max_abs(a), counts)
    if bad >= 0:
        return bad, 0.0, LU[bad, bad]
    Li = np.empty((n, n))
    Ui = np.empty((n, n))
    lu_triangular_inverses(LU, Li, Ui, counts)
    upper_lower_product(Ui, Li, X, counts)
    undo_column_pivots(X, piv)
    return -1, 0.0, 0.0


@njit(cache=True, nogil=True)
def inverse_batch(hbuf, off, sizes, k0, k1, out, method, reg, counts, fcounts, shifts, status):
    """Invert blocks ``k0..k1-1`` of a packed block diagonal into ``out``.

    Returns the first failing block or -1; ``status[k]`` then holds the
    failing pivot row and ``shifts[k]`` the offending pivot.
    """
    local = np.zeros(2, dtype=np.int64)
    for k in range(k0, k1):
        n = sizes[k]
        local[FACTOR] = 0
        bad, mu, pivot = invert_into(_view(hbuf, off, k, n, n), _view(out, off, k, n, n), method, reg, local)
        fcounts[k] = local[FACTOR]
        counts[FACTOR] += local[FACTOR]
        if bad >= 0:
            status[k] = bad
            shifts[k] = pivot
            counts[SUBST] += local[SUBST]
            return k
        shifts[k] = mu
    counts[SUBST] += local[SUBST]
    return -1


@njit(cache=True, nogil=True, fastmath=_FM)
def schur_build(hinv, xoff, xdims, rbuf, roff, rdims, ns, sel, cc, coff, d,
                sdiag, sdoff, slow, sloff, gam, goff, pt, ptoff):
    """``S = A H^{-1} A^T`` and ``A H^{-1} B - C`` with two products per stage.

    ``R_k = [A_super_k; A_diag_k; B_k^T]`` (the ``A_super`` rows only when
    ``ns[k] > 0``) gives ``Pt_k = R_k H_k^{-T}``, whose row blocks are the
    transposes of ``H_k^{-1} A_super_k^T``, ``H_k^{-1} A_diag_k^T`` and
    ``H_k^{-1} B_k``; ``T = [A_super_k; A_diag_k] Pt_k^T`` then holds every
    Schur and right-hand-side contribution of stage ``k``. ``sel[k] > 0``
    marks a shift block ``A_super_k = [0; -I 0]`` handled by copies. Every
    output block is overwritten, so the buffers need no clearing.
    """
    n_stage = xdims.shape[0]
    r0 = rdims[0]
    _view(sdiag, sdoff, 0, r0, r0)[:, :] = 0.0
    _view(gam, goff, 0, r0, d)[:, :] = -_view(cc, coff, 0, r0, d)
    for k in range(n_stage):
        n = xdims[k]
        rs = rdims[k]
        rd = rdims[k + 1]
        q = ns[k]
        nr = q + rd + d
        Hk = _view(hinv, xoff, k, n, n)
        Rk = _view(rbuf, roff, k, nr, n)
        P = _view(pt, ptoff, k, nr, n)
        if n > 0:
            np.dot(Rk, Hk.T, P)
        T = _mm_nt(Rk[: q + rd], P)
        Q0 = _view(sdiag, sdoff, k, rs, rs)
        Q1 = _view(sdiag, sdoff, k + 1, rd, rd)
        Lk = _view(slow, sloff, k, rd, rs)
        G0 = _view(gam, goff, k, rs, d)
        G1 = _view(gam, goff, k + 1, rd, d)
        C1 = _view(cc, coff, k + 1, rd, d)
        for i in range(rd):
            for j in range(rd):
                Q1[i, j] = 0.5 * (T[q + i, q + j] + T[q + j, q + i])
            for j in range(d):
                G1[i, j] = T[q + i, q + rd + j] - C1[i, j]
        if q > 0:
            for i in range(rs):
                for j in range(rs):
                    Q0[i, j] += 0.5 * (T[i, j] + T[j, i])
                for j in range(d):
                    G0[i, j] += T[i, q + rd + j]
            for i in range(rd):
                for j in range(rs):
                    Lk[i, j] = T[q + i, j]
        else:
            nx = sel[k]
            top = rs - nx
            for i in range(nx):
                for j in range(nx):
                    Q0[top + i, top + j] += Hk[i, j]
                for j in range(d):
                    G0[top + i, j] -= P[rd + j, i]
            for i in range(rd):
                for j in range(top):
                    Lk[i, j] = 0.0
                for j in range(nx):
                    Lk[i, top + j] = -P[i, j]


@njit(cache=True, nogil=True)
def _mm_nt(a, b):
    """``a @ b.T`` tolerating empty operands."""
    if a.shape[0] == 0 or a.shape[1] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    return np.dot(a, b.T)


@njit(cache=True, nogil=True)
def _mm_tn(a, b):
    """``a.T @ b`` tolerating empty operands."""
    if a.shape[0] == 0 or a.shape[1] == 0 or b.shape[1] == 0:
        return np.zeros((a.shape[1], b.shape[1]))
    return np.dot(a.T, b)


@njit(cache=True, nogil=True)
def tridiag_sweep(dbuf, doff, lbuf, loff, rdims, gbuf, goff, d, method, reg, counts,
                  qinv, gt, gg, xbuf, shifts, info):
    """Block tridiagonal solve with explicitly inverted reduced blocks.

    Forward sweep: ``Qinv_r = Qt_r^{-1}`` (same routine as the block
    diagonal inverse), ``G_r = L_r Qinv_r``, ``Qt_{r+1} = Q_{r+1} - G_r L_r^T``
    and ``Gt_{r+1} = Gamma_{r+1} - G_r Gt_r``. Backward substitution:
    ``X_M = Qinv_M Gt_M`` and ``X_r = Qinv_r (Gt_r - L_r^T X_{r+1})``.
    Returns the failing block or -1 (``info`` holds row and pivot).
    """
    M = rdims.shape[0] - 1
    n0 = rdims[0]
    Qt = _view(dbuf, doff, 0, n0, n0).copy()
    _view(gt, goff, 0, n0, d)[:, :] = _view(gbuf, goff, 0, n0, d)
    for r in range(M + 1):
        n = rdims[r]
        Qi = _view(qinv, doff, r, n, n)
        bad, mu, pivot = invert_into(Qt, Qi, method, reg, counts)
        if bad >= 0:
            info[0] = bad
            info[1] = pivot
            return r
        shifts[r] = mu
        if r == M:
            break
        n1 = rdims[r + 1]
        Lr = _view(lbuf, loff, r, n1, n)
        G = _view(gg, loff, r, n1, n)
        Gn = _view(gt, goff, r + 1, n1, d)
        if n > 0 and n1 > 0:
            np.dot(Lr, Qi, G)
            W = np.dot(G, Lr.T)
            if d > 0:
                np.dot(G, _view(gt, goff, r, n, d), Gn)
        else:
            G[:, :] = 0.0
            W = np.zeros((n1, n1))
            Gn[:, :] = 0.0
        Q1 = _view(dbuf, doff, r + 1, n1, n1)
        Qt = np.empty((n1, n1))
        for i in range(n1):
            for j in range(n1):
                Qt[i, j] = Q1[i, j] - 0.5 * (W[i, j] + W[j, i])
        G1 = _view(gbuf, goff, r + 1, n1, d)
        for i in range(n1):
            for j in range(d):
                Gn[i, j] = G1[i, j] - Gn[i, j]
    for r in range(M, -1, -1):
        n = rdims[r]
        rhs = _view(gt, goff, r, n, d)
        if r < M:
            n1 = rdims[r + 1]
            rhs = rhs - _mm_tn(_view(lbuf, loff, r, n1, n), _view(xbuf, goff, r + 1, n1, d))
        if n > 0 and d > 0:
            np.dot(_view(qinv, doff, r, n, n), rhs, _view(xbuf, goff, r, n, d))
    return -1


@njit(cache=True, nogil=True, fastmath=_FM)
def back_substitute(hinv, xoff, xdims, rdims, ns, sel, pt, ptoff, xbuf, goff, d, out, ooff):
    """``dxi_k = H_k^{-1} (A_super_k^T X_k + A_diag_k^T X_{k+1} - B_k)`` from ``Pt_k``."""
    for k in range(xdims.shape[0]):
        n = xdims[k]
        rs = rdims[k]
        rd = rdims[k + 1]
        q = ns[k]
        P = _view(pt, ptoff, k, q + rd + d, n)
        O = _view(out, ooff, k, n, d)
        if rd > 0 and n > 0:
            np.dot(P[q: q + rd].T, _view(xbuf, goff, k + 1, rd, d), O)
        else:
            O[:, :] = 0.0
        HB = P[q + rd:]
        for i in range(n):
            for j in range(d):
                O[i, j] -= HB[j, i]
        Xk = _view(xbuf, goff, k, rs, d)
        if q > 0:
            O += _mm_tn(P[:q], Xk)
        else:
            nx = sel[k]
            if nx > 0:
                Hk = _view(hinv, xoff, k, n, n)
                O -= _mm(np.ascontiguousarray(Hk[:, :nx]), Xk[rs - nx:])


@njit(cache=True, nogil=True, fastmath=_FM)
def kkt_defect(hbuf, xoff, xdims, rbuf, roff, rdims, ns, sel, cc, coff, d,
               dxi, ooff, lam, goff, bp, cp):
    """Right-hand sides of the correction system for a current solution.

    With ``H dxi - A^T lam + B = 0`` and ``A dxi + C = 0`` as the equations,
    ``bp = B + H dxi - A^T lam`` and ``cp = C + A dxi`` are the negated
    residuals, so solving with ``(bp, cp)`` in place of ``(B, C)`` yields
    the correction to add.
    """
    n_stage = xdims.shape[0]
    for i in range(n_stage + 1):
        r = rdims[i]
        _view(cp, goff, i, r, d)[:, :] = _view(cc, coff, i, r, d)
    for k in range(n_stage):
        n = xdims[k]
        rs = rdims[k]
        rd = rdims[k + 1]
        q = ns[k]
        Rk = _view(rbuf, roff, k, q + rd + d, n)
        Hk = _view(hbuf, xoff, k, n, n)
        Xk = _view(dxi, ooff, k, n, d)
        L0 = _view(lam, goff, k, rs, d)
        L1 = _view(lam, goff, k + 1, rd, d)
        Bk = _view(bp, ooff, k, n, d)
        C0 = _view(cp, goff, k, rs, d)
        C1 = _view(cp, goff, k + 1, rd, d)
        Bk[:, :] = _mm(Hk, Xk) - _mm_tn(Rk[q: q + rd], L1)
        for i in range(n):
            for j in range(d):
                Bk[i, j] += Rk[q + rd + j, i]
        C1 += _mm(Rk[q: q + rd], Xk)
        if q > 0:
            Bk -= _mm_tn(Rk[:q], L0)
            C0 += _mm(Rk[:q], Xk)
        else:
            nx = sel[k]
            top = rs - nx
            for i in range(nx):
                for j in range(d):
                    Bk[i, j] += L0[top + i, j]
                    C0[top + i, j] -= Xk[i, j]


@njit(cache=True, nogil=True, fastmath=_FM)
def correction_solve(hinv, xoff, xdims, rbuf, roff, rdims, ns, sel, d, pt, ptoff,
                     dbuf, doff, qinv, lbuf, loff, gg, bp, ooff, cp, goff,
                     hb, gam, gt, xl, e):
    """Solve the saddle system for right-hand side ``(bp, cp)`` reusing a sweep.

    ``qinv``, ``gg`` and ``pt`` are the reduced-block inverses, elimination
    multipliers and ``H^{-1} A^T`` products left by a full solve; only the
    right-hand-side recursions are repeated. The multiplier correction goes
    to ``xl`` and the primal correction to ``e``.
    """
    n_stage = xdims.shape[0]
    r0 = rdims[0]
    _view(gam, goff, 0, r0, d)[:, :] = -_view(cp, goff, 0, r0, d)
    for k in range(n_stage):
        n = xdims[k]
        rs = rdims[k]
        rd = rdims[k + 1]
        q = ns[k]
        Rk = _view(rbuf, roff, k, q + rd + d, n)
        HB = _view(hb, ooff, k, n, d)
        HB[:, :] = _mm(_view(hinv, xoff, k, n, n), _view(bp, ooff, k, n, d))
        G1 = _view(gam, goff, k + 1, rd, d)
        G1[:, :] = _mm(Rk[q: q + rd], HB) - _view(cp, goff, k + 1, rd, d)
        G0 = _view(gam, goff, k, rs, d)
        if q > 0:
            G0 += _mm(Rk[:q], HB)
        else:
            nx = sel[k]
            top = rs - nx
            for i in range(nx):
                for j in range(d):
                    G0[top + i, j] -= HB[i, j]
    M = rdims.shape[0] - 1
    _view(gt, goff, 0, r0, d)[:, :] = _view(gam, goff, 0, r0, d)
    for r in range(M):
        n = rdims[r]
        n1 = rdims[r + 1]
        _view(gt, goff, r + 1, n1, d)[:, :] = (
            _view(gam, goff, r + 1, n1, d) - _mm(_view(gg, loff, r, n1, n), _view(gt, goff, r, n, d))
        )
    for r in range(M, -1, -1):
        n = rdims[r]
        rhs = _view(gt, goff, r, n, d)
        if r < M:
            n1 = rdims[r + 1]
            rhs = rhs - _mm_tn(_view(lbuf, loff, r, n1, n), _view(xl, goff, r + 1, n1, d))
        _view(xl, goff, r, n, d)[:, :] = _mm(_view(qinv, doff, r, n, n), rhs)
    for k in range(n_stage):
        n = xdims[k]
        rs = rdims[k]
        rd = rdims[k + 1]
        q = ns[k]
        P = _view(pt, ptoff, k, q + rd + d, n)
        O = _view(e, ooff, k, n, d)
        O[:, :] = _mm_tn(P[q: q + rd], _view(xl, goff, k + 1, rd, d)) - _view(hb, ooff, k, n, d)
        Xk = _view(xl, goff, k, rs, d)
        if q > 0:
            O += _mm_tn(P[:q], Xk)
        else:
            nx = sel[k]
            if nx > 0:
                Hk = _view(hinv, xoff, k, n, n)
                O -= _mm(np.ascontiguousarray(Hk[:, :nx]), Xk[rs - nx:])
