"""JIT-compiled inner loop of compute_dynamics.

This is a line-for-line twin of the numpy implementation in dynamics.py,
written with explicit loops so numba can compile it. The numpy path stays the
reference; a regression test asserts both produce identical arrays. Set
QUADLOCO_NO_NUMBA=1 to force the numpy path.
"""

from __future__ import annotations

import os

import numpy as np

HAVE_NUMBA = False
if not os.environ.get("QUADLOCO_NO_NUMBA"):
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover
        pass

if not HAVE_NUMBA:  # pragma: no cover
    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True, fastmath=False)
def _cross_into(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True, fastmath=False)
def dynamics_core(
    R,
    xb,
    twist,
    q,
    qd,
    hip_offsets,
    l1,
    l2,
    link_masses,
    trunk_mass,
    I_trunk,
    I_haa,
    I_up,
    I_lo,
):
    """Returns (M, h, x_com, p_foot, v_foot, foot_jac, foot_bias, v_b, J_com_std)."""
    NV = 18
    nb = 13
    m1, m2, m3 = link_masses[0], link_masses[1], link_masses[2]
    m_tot = trunk_mass + 4.0 * (m1 + m2 + m3)
    g_vec = np.array([0.0, 0.0, -9.81])

    A1 = np.empty((4, 3, 3))
    A2 = np.empty((4, 3, 3))
    A3 = np.empty((4, 3, 3))
    p_hip = np.empty((4, 3))
    p_knee = np.empty((4, 3))
    p_foot = np.empty((4, 3))
    c_up = np.empty((4, 3))
    c_lo = np.empty((4, 3))
    s1 = np.empty((4, 3))
    s2 = np.empty((4, 3))
    s3 = np.empty((4, 3))

    for i in range(4):
        q1, q2, q3 = q[3 * i], q[3 * i + 1], q[3 * i + 2]
        c1, s1v = np.cos(q1), np.sin(q1)
        c2, s2v = np.cos(q2), np.sin(q2)
        c3, s3v = np.cos(q3), np.sin(q3)
        rx = np.array([[1.0, 0.0, 0.0], [0.0, c1, -s1v], [0.0, s1v, c1]])
        ry2 = np.array([[c2, 0.0, s2v], [0.0, 1.0, 0.0], [-s2v, 0.0, c2]])
        ry3 = np.array([[c3, 0.0, s3v], [0.0, 1.0, 0.0], [-s3v, 0.0, c3]])
        A1[i] = R @ rx
        A2[i] = A1[i] @ ry2
        A3[i] = A2[i] @ ry3
        p_hip[i] = xb + R @ hip_offsets[i]
        for a in range(3):
            p_knee[i, a] = p_hip[i, a] - l1 * A2[i, a, 2]
            p_foot[i, a] = p_knee[i, a] - l2 * A3[i, a, 2]
            c_up[i, a] = p_hip[i, a] - 0.5 * l1 * A2[i, a, 2]
            c_lo[i, a] = p_knee[i, a] - 0.5 * l2 * A3[i, a, 2]
            s1[i, a] = R[a, 0]
            s2[i, a] = A1[i, a, 1]
            s3[i, a] = A2[i, a, 1]

    x_com = trunk_mass * xb
    for i in range(4):
        x_com = x_com + m1 * p_hip[i] + m2 * c_up[i] + m3 * c_lo[i]
    x_com = x_com / m_tot

    # body bookkeeping: 0 trunk, then per leg (haa, upper, lower)
    masses = np.empty(nb)
    masses[0] = trunk_mass
    coms = np.empty((nb, 3))
    coms[0] = xb
    Iw = np.empty((nb, 3, 3))
    Iw[0] = R @ I_trunk @ R.T
    body_leg = np.full(nb, -1, dtype=np.int64)
    body_level = np.zeros(nb, dtype=np.int64)
    k = 1
    for i in range(4):
        masses[k] = m1; coms[k] = p_hip[i]
        Iw[k] = A1[i] @ I_haa @ A1[i].T
        body_leg[k] = i; body_level[k] = 1; k += 1
        masses[k] = m2; coms[k] = c_up[i]
        Iw[k] = A2[i] @ I_up @ A2[i].T
        body_leg[k] = i; body_level[k] = 2; k += 1
        masses[k] = m3; coms[k] = c_lo[i]
        Iw[k] = A3[i] @ I_lo @ A3[i].T
        body_leg[k] = i; body_level[k] = 3; k += 1

    # linear/angular Jacobians in std coords [v_b, w, qd]
    Jv = np.zeros((nb, 3, NV))
    Jw = np.zeros((nb, 3, NV))
    tmp = np.empty(3)
    for b in range(nb):
        for a in range(3):
            Jv[b, a, a] = 1.0
            Jw[b, a, 3 + a] = 1.0
        rel = coms[b] - xb
        Jv[b, 0, 4] = rel[2]; Jv[b, 0, 5] = -rel[1]
        Jv[b, 1, 3] = -rel[2]; Jv[b, 1, 5] = rel[0]
        Jv[b, 2, 3] = rel[1]; Jv[b, 2, 4] = -rel[0]
        i = body_leg[b]
        if i >= 0:
            col = 6 + 3 * i
            lev = body_level[b]
            _cross_into(s1[i], coms[b] - p_hip[i], tmp)
            for a in range(3):
                Jv[b, a, col] = tmp[a]
                Jw[b, a, col] = s1[i, a]
            if lev >= 2:
                _cross_into(s2[i], coms[b] - p_hip[i], tmp)
                for a in range(3):
                    Jv[b, a, col + 1] = tmp[a]
                    Jw[b, a, col + 1] = s2[i, a]
            if lev >= 3:
                _cross_into(s3[i], coms[b] - p_knee[i], tmp)
                for a in range(3):
                    Jv[b, a, col + 2] = tmp[a]
                    Jw[b, a, col + 2] = s3[i, a]

    J_com_std = np.zeros((3, NV))
    for b in range(nb):
        J_com_std += masses[b] * Jv[b]
    J_com_std = J_com_std / m_tot

    r = x_com - xb
    sk_r = np.array([[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]])
    dq_cols = -J_com_std[:, 6:]

    # velocity pass
    w0 = twist[3:6].copy()
    v_b = twist[:3] + sk_r @ w0 + dq_cols @ qd

    w1 = np.empty((4, 3)); w2 = np.empty((4, 3)); w3 = np.empty((4, 3))
    al1 = np.empty((4, 3)); al2 = np.empty((4, 3)); al3 = np.empty((4, 3))
    for i in range(4):
        _cross_into(w0, s1[i], tmp)
        for a in range(3):
            w1[i, a] = w0[a] + qd[3 * i] * s1[i, a]
            al1[i, a] = qd[3 * i] * tmp[a]
        _cross_into(w1[i], s2[i], tmp)
        for a in range(3):
            w2[i, a] = w1[i, a] + qd[3 * i + 1] * s2[i, a]
            al2[i, a] = al1[i, a] + qd[3 * i + 1] * tmp[a]
        _cross_into(w2[i], s3[i], tmp)
        for a in range(3):
            w3[i, a] = w2[i, a] + qd[3 * i + 2] * s3[i, a]
            al3[i, a] = al2[i, a] + qd[3 * i + 2] * tmp[a]

    tmp2 = np.empty(3)
    v_foot = np.empty((4, 3))
    a_foot = np.empty((4, 3))
    body_acc = np.zeros((nb, 3))
    body_w = np.empty((nb, 3))
    body_al = np.zeros((nb, 3))
    body_w[0] = w0

    def _pm(pp, ref_p, v_ref, a_ref, w, al):
        rr2 = pp - ref_p
        o1 = np.empty(3); o2 = np.empty(3); o3 = np.empty(3)
        _cross_into(w, rr2, o1)
        v = v_ref + o1
        _cross_into(al, rr2, o2)
        _cross_into(w, o1, o3)
        a = a_ref + o2 + o3
        return v, a

    for i in range(4):
        rr = p_hip[i] - xb
        _cross_into(w0, rr, tmp)
        v_hip = v_b + tmp
        _cross_into(w0, tmp, tmp2)
        a_hip = tmp2.copy()

        _, a_cup = _pm(c_up[i], p_hip[i], v_hip, a_hip, w2[i], al2[i])
        v_knee, a_knee = _pm(p_knee[i], p_hip[i], v_hip, a_hip, w2[i], al2[i])
        _, a_clo = _pm(c_lo[i], p_knee[i], v_knee, a_knee, w3[i], al3[i])
        vf, af = _pm(p_foot[i], p_knee[i], v_knee, a_knee, w3[i], al3[i])
        v_foot[i] = vf
        a_foot[i] = af
        b0 = 1 + 3 * i
        body_acc[b0] = a_hip; body_acc[b0 + 1] = a_cup; body_acc[b0 + 2] = a_clo
        body_w[b0] = w1[i]; body_w[b0 + 1] = w2[i]; body_w[b0 + 2] = w3[i]
        body_al[b0] = al1[i]; body_al[b0 + 1] = al2[i]; body_al[b0 + 2] = al3[i]

    b_com = np.zeros(3)
    for b in range(nb):
        b_com += masses[b] * body_acc[b]
    b_com = b_com / m_tot

    # T^-1 applied in place to the linear Jacobians
    for b in range(nb):
        for a in range(3):
            for col in range(3):
                Jv[b, a, 3 + col] += (
                    Jv[b, a, 0] * sk_r[0, col]
                    + Jv[b, a, 1] * sk_r[1, col]
                    + Jv[b, a, 2] * sk_r[2, col]
                )
            for col in range(12):
                Jv[b, a, 6 + col] += (
                    Jv[b, a, 0] * dq_cols[0, col]
                    + Jv[b, a, 1] * dq_cols[1, col]
                    + Jv[b, a, 2] * dq_cols[2, col]
                )

    M = np.zeros((NV, NV))
    h = np.zeros(NV)
    for b in range(nb):
        JvT = Jv[b].T
        JwT = Jw[b].T
        M += masses[b] * (JvT @ Jv[b]) + JwT @ (Iw[b] @ Jw[b])
        f = masses[b] * (body_acc[b] - b_com - g_vec)
        _cross_into(body_w[b], Iw[b] @ body_w[b], tmp)
        tq = Iw[b] @ body_al[b] + tmp
        h += JvT @ f + JwT @ tq
    M = 0.5 * (M + M.T)

    # foot Jacobians (CoM coordinates) and bias accelerations
    foot_jac = np.zeros((4, 3, NV))
    foot_bias = np.empty((4, 3))
    for i in range(4):
        for a in range(3):
            foot_jac[i, a, a] = 1.0
        rel = p_foot[i] - x_com  # -skew(p - xb) + skew(r) == -skew(p - x_com)
        foot_jac[i, 0, 4] = rel[2]; foot_jac[i, 0, 5] = -rel[1]
        foot_jac[i, 1, 3] = -rel[2]; foot_jac[i, 1, 5] = rel[0]
        foot_jac[i, 2, 3] = rel[1]; foot_jac[i, 2, 4] = -rel[0]
        col = 6 + 3 * i
        _cross_into(s1[i], p_foot[i] - p_hip[i], tmp)
        for a in range(3):
            foot_jac[i, a, col] = tmp[a]
        _cross_into(s2[i], p_foot[i] - p_hip[i], tmp)
        for a in range(3):
            foot_jac[i, a, col + 1] = tmp[a]
        _cross_into(s3[i], p_foot[i] - p_knee[i], tmp)
        for a in range(3):
            foot_jac[i, a, col + 2] = tmp[a]
        for a in range(3):
            for colj in range(12):
                foot_jac[i, a, 6 + colj] += dq_cols[a, colj]
            foot_bias[i, a] = a_foot[i, a] - b_com[a]

    return M, h, x_com, p_foot, v_foot, foot_jac, foot_bias, v_b, J_com_std
