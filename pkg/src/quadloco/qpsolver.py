"""Dense convex QP solver.

Canonical form mirrors what the whole-body controller assembles every tick:

    minimize    0.5 x^T H x + g^T x
    subject to  A x == b
                d_lo <= C x <= d_hi
                lb <= x <= ub

The method is a Mehrotra predictor-corrector primal-dual interior point on
the one-sided expansion of the two-sided rows. The reduced KKT system is
factorized once per iteration (LU) and reused for the corrector. Identical
inputs give bitwise-identical outputs; a primal warm start is accepted (it
seeds the initial iterate).

Near-PSD Hessians (minimum eigenvalue in (-1e-9, 0)) are nudged by adding
1e-9 * I; anything more indefinite is rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

_INF = np.inf


@dataclass
class QuadraticProgram:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    C: np.ndarray | None = None
    d_lo: np.ndarray | None = None
    d_hi: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.size
        if self.H.shape != (n, n):
            raise ValueError("H/g dimension mismatch")
        if self.A_eq is None:
            self.A_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
            if self.b_eq.size != self.A_eq.shape[0]:
                raise ValueError("A_eq/b_eq dimension mismatch")
        if self.C is None:
            self.C = np.zeros((0, n))
            self.d_lo = np.zeros(0)
            self.d_hi = np.zeros(0)
        else:
            self.C = np.asarray(self.C, dtype=float).reshape(-1, n)
            self.d_lo = np.asarray(self.d_lo, dtype=float).ravel()
            self.d_hi = np.asarray(self.d_hi, dtype=float).ravel()
            if not (self.d_lo.size == self.d_hi.size == self.C.shape[0]):
                raise ValueError("C/d_lo/d_hi dimension mismatch")
        self.lb = (
            np.full(n, -_INF) if self.lb is None
            else np.asarray(self.lb, dtype=float).ravel()
        )
        self.ub = (
            np.full(n, _INF) if self.ub is None
            else np.asarray(self.ub, dtype=float).ravel()
        )
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bounds dimension mismatch")
        for name, arr in (("H", self.H), ("g", self.g), ("A_eq", self.A_eq),
                          ("b_eq", self.b_eq), ("C", self.C)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"NaN/inf in {name}")
        if np.any(np.isnan(self.d_lo)) or np.any(np.isnan(self.d_hi)):
            raise ValueError("NaN in inequality bounds")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ValueError("NaN in variable bounds")
        if np.abs(self.H - self.H.T).max(initial=0.0) > 1e-12:
            raise ValueError("Hessian is not symmetric (tolerance 1e-12)")
        if np.any(self.d_lo > self.d_hi) or np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.g.size


@dataclass
class QpSolution:
    x: np.ndarray
    status: str                       # "optimal" | "infeasible" | "max-iterations"
    iterations: int
    duals_eq: np.ndarray
    # multipliers of the expanded one-sided rows, >= 0
    duals_ineq_upper: np.ndarray      # for C x <= d_hi
    duals_ineq_lower: np.ndarray      # for C x >= d_lo
    duals_bound_upper: np.ndarray
    duals_bound_lower: np.ndarray
    kkt_stationarity: float
    kkt_primal: float
    kkt_complementarity: float

    @property
    def kkt_residuals(self) -> tuple[float, float, float]:
        return (self.kkt_stationarity, self.kkt_primal, self.kkt_complementarity)


def _expand(qp: QuadraticProgram):
    """One-sided expansion G x <= h with a map back to the original rows.

    Row order: C-upper, C-lower, bound-upper, bound-lower (finite rows only).
    """
    n = qp.n
    icu = np.flatnonzero(np.isfinite(qp.d_hi))
    icl = np.flatnonzero(np.isfinite(qp.d_lo))
    ibu = np.flatnonzero(np.isfinite(qp.ub))
    ibl = np.flatnonzero(np.isfinite(qp.lb))
    eye = np.eye(n)
    G = np.vstack([qp.C[icu], -qp.C[icl], eye[ibu], -eye[ibl]])
    h = np.concatenate([qp.d_hi[icu], -qp.d_lo[icl], qp.ub[ibu], -qp.lb[ibl]])
    tags = (
        [("cu", int(i)) for i in icu]
        + [("cl", int(i)) for i in icl]
        + [("bu", int(j)) for j in ibu]
        + [("bl", int(j)) for j in ibl]
    )
    return G, h, tags


def _residuals(qp, x, y, z, G, h, Gx=None):
    if Gx is None:
        Gx = G @ x
    r_d = qp.H @ x + qp.g + qp.A_eq.T @ y + G.T @ z
    stat = float(np.abs(r_d).max(initial=0.0))
    prim_eq = float(np.abs(qp.A_eq @ x - qp.b_eq).max(initial=0.0))
    viol = Gx - h
    prim_in = float(np.maximum(viol, 0.0).max(initial=0.0))
    slack = np.maximum(-viol, 0.0)
    comp = float(np.abs(slack * z).max(initial=0.0))
    return stat, max(prim_eq, prim_in), comp


def solve(
    qp: QuadraticProgram,
    tolerance: float = 1e-8,
    max_iterations: int = 100,
    warm_start: np.ndarray | None = None,
) -> QpSolution:
    """Solve the QP. See module docstring for the method."""
    n = qp.n
    H = qp.H
    # convexity guard: regularize a numerically-semidefinite Hessian
    w = np.linalg.eigvalsh(H)
    if w[0] < -1e-9:
        raise ValueError(f"Hessian is indefinite (min eigenvalue {w[0]:.3e})")
    if w[0] < 0.0:
        H = H + 1e-9 * np.eye(n)

    G, h, tags = _expand(qp)
    A, b = qp.A_eq, qp.b_eq
    me, mi = A.shape[0], G.shape[0]

    def pack_solution(x, y, z, status, it):
        stat, prim, comp = _residuals(qp, x, y, z, G, h)
        dcu = np.zeros(qp.C.shape[0]); dcl = np.zeros(qp.C.shape[0])
        dbu = np.zeros(n); dbl = np.zeros(n)
        for zk, (kind, idx) in zip(z, tags):
            if kind == "cu":
                dcu[idx] = zk
            elif kind == "cl":
                dcl[idx] = zk
            elif kind == "bu":
                dbu[idx] = zk
            else:
                dbl[idx] = zk
        return QpSolution(
            x=x, status=status, iterations=it, duals_eq=y,
            duals_ineq_upper=dcu, duals_ineq_lower=dcl,
            duals_bound_upper=dbu, duals_bound_lower=dbl,
            kkt_stationarity=stat, kkt_primal=prim, kkt_complementarity=comp,
        )

    # equality-only / unconstrained: direct KKT solve
    if mi == 0:
        if me == 0:
            x = np.linalg.solve(H + 1e-14 * np.eye(n), -qp.g)
            return pack_solution(x, np.zeros(0), np.zeros(0), "optimal", 0)
        K = np.zeros((n + me, n + me))
        K[:n, :n] = H
        K[:n, n:] = A.T
        K[n:, :n] = A
        try:
            sol = np.linalg.solve(K, np.concatenate([-qp.g, b]))
        except np.linalg.LinAlgError:
            K[n:, n:] -= 1e-12 * np.eye(me)
            sol = np.linalg.solve(K, np.concatenate([-qp.g, b]))
        x, y = sol[:n], sol[n:]
        out = pack_solution(x, y, np.zeros(0), "optimal", 0)
        if max(out.kkt_residuals) > tolerance:
            out.status = "infeasible"
        return out

    # interior-point iterations
    x = np.zeros(n) if warm_start is None else np.asarray(warm_start, float).ravel().copy()
    if x.size != n:
        raise ValueError("warm start dimension mismatch")
    # keep the seed strictly inside the bounds so s0 is safely positive; a
    # seed pinned to a bound stalls the interior point, so push in by a
    # fraction of the box width
    lb_c = np.where(np.isfinite(qp.lb), qp.lb, -1e12)
    ub_c = np.where(np.isfinite(qp.ub), qp.ub, 1e12)
    margin = 0.01 * np.minimum(ub_c - lb_c, 1.0)
    x = np.clip(x, lb_c + margin, np.maximum(lb_c + margin, ub_c - margin))
    z0_scale = max(1.0, float(np.abs(qp.g).max(initial=1.0)))

    from . import _qpcore

    if _qpcore.HAVE_NUMBA:
        xs, ys, zs, _, code, its = _qpcore.ipm_core(
            np.ascontiguousarray(H), qp.g, A, b,
            np.ascontiguousarray(G), h, x, z0_scale,
            float(tolerance), int(max_iterations),
        )
        status = {0: "optimal", 1: "infeasible", 2: "max-iterations"}[int(code)]
        return pack_solution(xs, ys, zs, status, int(its))

    y = np.zeros(me)
    # Mehrotra-style shifted start: slacks from the seed, pushed well inside
    s_raw = h - G @ x
    shift = max(1.0, float(-1.5 * s_raw.min(initial=0.0)))
    s = s_raw + shift
    z = np.full(mi, z0_scale)

    status = "max-iterations"
    it = 0
    GT = np.ascontiguousarray(G.T)
    AT = np.ascontiguousarray(A.T)
    K = np.zeros((n + me, n + me))
    K[:n, n:] = AT
    K[n:, :n] = A
    K[n:, n:] = -1e-13 * np.eye(me)
    for it in range(1, max_iterations + 1):
        Gx = G @ x
        r_d = H @ x + qp.g + AT @ y + GT @ z
        r_pA = A @ x - b
        r_pG = Gx + s - h
        mu = float(s @ z) / mi

        stat, prim, comp = _residuals(qp, x, y, z, G, h, Gx)
        if stat <= tolerance and prim <= tolerance and comp <= tolerance:
            status = "optimal"
            break
        # crude divergence certificate: dual blow-up with stuck primal
        if np.abs(z).max(initial=0.0) > 1e12 and prim > np.sqrt(tolerance):
            status = "infeasible"
            break

        W = z / s
        K[:n, :n] = H + (GT * W) @ G
        try:
            lu_piv = sla.lu_factor(K, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            K[:n, :n] += 1e-10 * np.eye(n)
            lu_piv = sla.lu_factor(K, check_finite=False)

        def kkt_solve(r_sz):
            rhs = np.concatenate([-r_d - GT @ ((-r_sz + z * r_pG) / s), -r_pA])
            sol = sla.lu_solve(lu_piv, rhs, check_finite=False)
            # one iterative-refinement pass keeps the direction usable when
            # the scaling matrix is badly conditioned near convergence
            sol -= sla.lu_solve(lu_piv, K @ sol - rhs, check_finite=False)
            dx, dy = sol[:n], sol[n:]
            ds = -r_pG - G @ dx
            dz = (-r_sz - z * ds) / s
            return dx, dy, ds, dz

        # predictor
        dx_a, dy_a, ds_a, dz_a = kkt_solve(s * z)
        alpha_p = _max_step(s, ds_a)
        alpha_d = _max_step(z, dz_a)
        mu_aff = float((s + alpha_p * ds_a) @ (z + alpha_d * dz_a)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # corrector; a single step length keeps r_d contracting linearly.
        # The centering target is floored so complementarity cannot collapse
        # orders of magnitude below the other residuals (that would wreck the
        # conditioning of the scaling matrix before they converge).
        target = max(sigma * mu, min(0.1 * max(stat, prim), mu))
        r_sz = s * z + ds_a * dz_a - target
        dx, dy, ds, dz = kkt_solve(r_sz)
        alpha = min(0.995 * _max_step(s, ds), 0.995 * _max_step(z, dz), 1.0)
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        # stall rescue: a degenerate pair (s_i, z_i -> 0, 0) wrecks the
        # scaling matrix; re-center the worst offenders toward the current mu
        if alpha < 0.01:
            mu_now = max(float(s @ z) / mi, 1e-14)
            floor = 1e-4 * np.sqrt(mu_now)
            s = np.maximum(s, floor)
            z = np.maximum(z, floor)

    return pack_solution(x, y, z, status, it)


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    ratio = np.where(dv < 0.0, v / np.where(dv < 0.0, -dv, 1.0), 1.0)
    return float(min(1.0, ratio.min(initial=1.0)))


# ---------------------------------------------------------------------------
# text dump (fixed layout, see README)
# ---------------------------------------------------------------------------

def dump_qp(qp: QuadraticProgram, path) -> None:
    """Write the QP to a text file: a header line `n me mi`, then H, g, A_eq,
    b_eq, C, d_lo, d_hi, lb, ub as whitespace-separated rows in that order."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("# quadloco qp v1\n")
        f.write(f"{qp.n} {qp.A_eq.shape[0]} {qp.C.shape[0]}\n")
        for block in (qp.H, qp.g, qp.A_eq, qp.b_eq, qp.C, qp.d_lo, qp.d_hi,
                      qp.lb, qp.ub):
            arr = np.atleast_2d(np.asarray(block, dtype=float))
            for row in arr:
                f.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_qp(path) -> QuadraticProgram:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f if ln.strip() and not ln.startswith("#")]
    n, me, mi = (int(t) for t in lines[0].split())
    vals: list[list[float]] = [[float(t) for t in ln.split()] for ln in lines[1:]]
    k = 0

    def take(rows):
        nonlocal k
        out = np.array(vals[k : k + rows])
        k += rows
        return out

    H = take(n)
    g = take(1).ravel()
    # empty blocks write no lines (their rows are blank and filtered on read)
    A = take(me) if me else np.zeros((0, n))
    b = take(1).ravel() if me else np.zeros(0)
    C = take(mi) if mi else np.zeros((0, n))
    d_lo = take(1).ravel() if mi else np.zeros(0)
    d_hi = take(1).ravel() if mi else np.zeros(0)
    lb = take(1).ravel()
    ub = take(1).ravel()
    return QuadraticProgram(H, g, A, b, C, d_lo, d_hi, lb, ub)
