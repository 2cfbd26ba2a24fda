"""Brute-force reimplementation of the foothold criteria for oracle tests.

Plain scalar loops, no vectorization, following the documented definitions:
slope statistics over the 8-neighborhood, workspace spheres at touchdown and
next lift-off plus the sampled swing path, interior link samples against the
heightfield with a clearance, sampled swing-path collision, AND, then
Chebyshev erosion.
"""

import numpy as np


def _lookup(hm, x, y):
    i = int(np.rint((x - hm.origin[0]) / hm.resolution))
    j = int(np.rint((y - hm.origin[1]) / hm.resolution))
    i = min(max(i, 0), hm.heights.shape[0] - 1)
    j = min(max(j, 0), hm.heights.shape[1] - 1)
    return hm.heights[i, j]


def _swing_points(cfg, p_lo, target, svals):
    pts = []
    for s in svals:
        p = p_lo + (target - p_lo) * s
        p = p.copy()
        p[2] += cfg.step_height * np.sin(np.pi * s) ** 2
        pts.append(p)
    return pts


def _knee(hip, foot, cfg):
    d = foot - hip
    rho = float(np.linalg.norm(d))
    rho = min(max(rho, abs(cfg.l1 - cfg.l2) + 1e-9), cfg.reach - 1e-9)
    cos_psi = (cfg.l1**2 + rho**2 - cfg.l2**2) / (2.0 * cfg.l1 * rho)
    psi = float(np.arccos(min(max(cos_psi, -1.0), 1.0)))
    u = d / max(float(np.linalg.norm(d)), 1e-12)
    perp = np.array([0.0, 0.0, 1.0]) - u * u[2]
    n = float(np.linalg.norm(perp))
    if n <= 1e-9:
        perp = np.array([-1.0, 0.0, 0.0])
    else:
        perp = perp / n
        if perp[0] > 0.0:
            perp = -perp
    return hip + cfg.l1 * (u * np.cos(psi) + perp * np.sin(psi))


def oracle_fec(hm, hip_height, twist, gait, cfg):
    n_x, n_y = hm.heights.shape
    res = hm.resolution
    v_xy = np.asarray(twist, float)[:2]
    hip_now = hm.center
    hip_td = hip_now + v_xy * gait.time_to_touchdown
    hip_lo = hip_td + v_xy * gait.stance_duration
    t0 = gait.time_to_touchdown - gait.swing_duration
    lo_xy = hip_now + v_xy * t0 - np.array([gait.step_length / 2.0, 0.0])
    p_lo = np.array([lo_xy[0], lo_xy[1], _lookup(hm, lo_xy[0], lo_xy[1])])

    tr = np.zeros((n_x, n_y), dtype=bool)
    kf = np.zeros((n_x, n_y), dtype=bool)
    lc = np.zeros((n_x, n_y), dtype=bool)
    fc = np.zeros((n_x, n_y), dtype=bool)

    s_path = np.linspace(0.0, 1.0, cfg.path_samples)
    s_coll = np.linspace(0.05, 0.95, cfg.path_samples)
    phases = np.linspace(0.0, 1.0, cfg.lc_sweep_phases)
    t_thigh = np.linspace(0.15, 0.95, cfg.lc_samples_per_link)
    t_shank = np.linspace(0.05, 0.80, cfg.lc_samples_per_link)

    for i in range(n_x):
        for j in range(n_y):
            x = hm.origin[0] + res * i
            y = hm.origin[1] + res * j
            h = hm.heights[i, j]
            cand = np.array([x, y, h])

            # terrain roughness
            slopes = []
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == 0 and dj == 0:
                        continue
                    ii, jj = i + di, j + dj
                    if 0 <= ii < n_x and 0 <= jj < n_y:
                        dist = res * float(np.hypot(di, dj))
                        slopes.append(abs(hm.heights[ii, jj] - h) / dist)
            tr[i, j] = (
                np.mean(slopes) <= cfg.tr_mean_threshold
                and np.std(slopes) <= cfg.tr_std_threshold
            )

            # kinematic feasibility
            ok = True
            for hxy in (hip_td, hip_lo):
                hip = np.array([hxy[0], hxy[1], hip_height])
                if float(np.linalg.norm(cand - hip)) > cfg.reach:
                    ok = False
            if ok:
                for s, p in zip(s_path, _swing_points(cfg, p_lo, cand, s_path)):
                    t_now = gait.time_to_touchdown - gait.swing_duration * (1 - s)
                    hxy = hip_now + v_xy * t_now
                    hip = np.array([hxy[0], hxy[1], hip_height])
                    if float(np.linalg.norm(p - hip)) > cfg.reach:
                        ok = False
                        break
            kf[i, j] = ok

            # leg collision (including the trunk-underside clearance)
            ok = True
            for ph in phases:
                hxy = hip_td + (hip_lo - hip_td) * ph
                hip = np.array([hxy[0], hxy[1], hip_height])
                if hip[2] - _lookup(hm, hip[0], hip[1]) < cfg.body_clearance:
                    ok = False
                    break
                knee = _knee(hip, cand, cfg)
                for tset, a, b in ((t_thigh, hip, knee), (t_shank, knee, cand)):
                    for t in tset:
                        p = a + (b - a) * t
                        if p[2] - _lookup(hm, p[0], p[1]) < cfg.clearance:
                            ok = False
            lc[i, j] = ok

            # foot trajectory collision
            ok = True
            for p in _swing_points(cfg, p_lo, cand, s_coll):
                if p[2] < _lookup(hm, p[0], p[1]) - 1e-9:
                    ok = False
                    break
            fc[i, j] = ok

    pre = tr & kf & lc & fc
    final = pre.copy()
    r = cfg.erosion_radius
    for i in range(n_x):
        for j in range(n_y):
            if not pre[i, j]:
                continue
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < n_x and 0 <= jj < n_y and not pre[ii, jj]:
                        final[i, j] = False
    return final, tr, lc, kf, fc, pre
