"""JIT-compiled interior-point loop for the QP solver.

Twin of the iteration in qpsolver.solve (the reference); selected when numba
is importable. Status codes: 0 optimal, 1 infeasible, 2 max-iterations.
"""

from __future__ import annotations

import numpy as np

from ._dyncore import HAVE_NUMBA

if HAVE_NUMBA:
    from numba import njit
else:  # pragma: no cover
    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def _lu_factor_ip(K, piv):
    """In-place LU with partial pivoting (Doolittle). K is overwritten."""
    n = K.shape[0]
    for k in range(n):
        p = k
        mx = abs(K[k, k])
        for i in range(k + 1, n):
            v = abs(K[i, k])
            if v > mx:
                mx = v
                p = i
        piv[k] = p
        if p != k:
            for j in range(n):
                t = K[k, j]
                K[k, j] = K[p, j]
                K[p, j] = t
        pivot = K[k, k]
        if pivot == 0.0:
            pivot = 1e-300
            K[k, k] = pivot
        inv = 1.0 / pivot
        for i in range(k + 1, n):
            lik = K[i, k] * inv
            K[i, k] = lik
            if lik != 0.0:
                for j in range(k + 1, n):
                    K[i, j] -= lik * K[k, j]


@njit(cache=True)
def _lu_solve_ip(LU, piv, rhs):
    """Solve with the factors from _lu_factor_ip; rhs copied, solution returned."""
    n = LU.shape[0]
    x = rhs.copy()
    for k in range(n):  # apply all row interchanges first (P b)
        p = piv[k]
        if p != k:
            t = x[k]
            x[k] = x[p]
            x[p] = t
    for k in range(n):  # L y = P b (unit diagonal)
        xk = x[k]
        if xk != 0.0:
            for i in range(k + 1, n):
                x[i] -= LU[i, k] * xk
    for k in range(n - 1, -1, -1):  # U x = y
        acc = x[k]
        for j in range(k + 1, n):
            acc -= LU[k, j] * x[j]
        x[k] = acc / LU[k, k]
    return x


@njit(cache=True)
def ipm_core(H, g, A, b, G, h, x0, z0_scale, tol, max_iterations):
    n = g.size
    me = b.size
    mi = h.size

    x = x0.copy()
    y = np.zeros(me)
    s_raw = h - G @ x
    mn = 0.0
    for i in range(mi):
        if s_raw[i] < mn:
            mn = s_raw[i]
    shift = max(1.0, -1.5 * mn)
    s = s_raw + shift
    z = np.full(mi, z0_scale)

    AT = A.T.copy()
    GT = G.T.copy()
    K = np.zeros((n + me, n + me))
    for i in range(me):
        for j in range(n):
            K[n + i, j] = A[i, j]
            K[j, n + i] = A[i, j]
        K[n + i, n + i] = -1e-13

    status = 2
    it = 0
    stat = 0.0
    prim = 0.0
    comp = 0.0
    for it in range(1, max_iterations + 1):
        Gx = G @ x
        r_d = H @ x + g + AT @ y + GT @ z
        r_pA = A @ x - b
        r_pG = Gx + s - h
        mu = (s @ z) / mi

        stat = np.abs(r_d).max()
        prim_eq = 0.0
        for i in range(me):
            v = abs(r_pA[i])
            if v > prim_eq:
                prim_eq = v
        prim_in = 0.0
        comp = 0.0
        for i in range(mi):
            v = Gx[i] - h[i]
            if v > prim_in:
                prim_in = v
            sl = -v if v < 0.0 else 0.0
            c = abs(sl * z[i])
            if c > comp:
                comp = c
        prim = max(prim_eq, prim_in)
        if stat <= tol and prim <= tol and comp <= tol:
            status = 0
            break
        if np.abs(z).max() > 1e12 and prim > np.sqrt(tol):
            status = 1
            break

        W = z / s
        WG = np.empty_like(G)
        for i in range(mi):
            for j in range(n):
                WG[i, j] = W[i] * G[i, j]
        Hbar = H + GT @ WG
        for i in range(n):
            for j in range(n):
                K[i, j] = Hbar[i, j]

        LU = K.copy()
        piv = np.empty(n + me, dtype=np.int64)
        _lu_factor_ip(LU, piv)

        # predictor
        r_sz = s * z
        rhs = np.empty(n + me)
        tmpv = (-r_sz + z * r_pG) / s
        top = -r_d - GT @ tmpv
        rhs[:n] = top
        rhs[n:] = -r_pA
        sol = _lu_solve_ip(LU, piv, rhs)
        sol -= _lu_solve_ip(LU, piv, K @ sol - rhs)
        dx = sol[:n]
        ds_a = -r_pG - G @ dx
        dz_a = (-r_sz - z * ds_a) / s

        alpha_p = 1.0
        alpha_d = 1.0
        for i in range(mi):
            if ds_a[i] < 0.0:
                r = -s[i] / ds_a[i]
                if r < alpha_p:
                    alpha_p = r
            if dz_a[i] < 0.0:
                r = -z[i] / dz_a[i]
                if r < alpha_d:
                    alpha_d = r
        mu_aff = ((s + alpha_p * ds_a) @ (z + alpha_d * dz_a)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0.0 else 0.0

        # corrector with floored centering target
        target = sigma * mu
        floor_t = 0.1 * max(stat, prim)
        if floor_t > mu:
            floor_t = mu
        if floor_t > target:
            target = floor_t
        r_sz2 = s * z + ds_a * dz_a - target
        tmpv2 = (-r_sz2 + z * r_pG) / s
        rhs[:n] = -r_d - GT @ tmpv2
        sol = _lu_solve_ip(LU, piv, rhs)
        sol -= _lu_solve_ip(LU, piv, K @ sol - rhs)
        dx = sol[:n]
        dy = sol[n:]
        ds = -r_pG - G @ dx
        dz = (-r_sz2 - z * ds) / s

        alpha = 1.0
        for i in range(mi):
            if ds[i] < 0.0:
                r = -0.995 * s[i] / ds[i]
                if r < alpha:
                    alpha = r
            if dz[i] < 0.0:
                r = -0.995 * z[i] / dz[i]
                if r < alpha:
                    alpha = r
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        if alpha < 0.01:
            mu_now = max((s @ z) / mi, 1e-14)
            fl = 1e-4 * np.sqrt(mu_now)
            for i in range(mi):
                if s[i] < fl:
                    s[i] = fl
                if z[i] < fl:
                    z[i] = fl

    return x, y, z, s, status, it
