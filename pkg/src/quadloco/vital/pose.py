"""Body-pose optimization over the per-leg safe-foothold curves.

The decision is the body pose u = (z_b, roll, pitch); hip heights follow
from the pose through the hip forward kinematics, and the objective pushes
them toward the maxima of the four safe curves. A coarse deterministic grid
scan plus local polish handles the multi-peaked curves; the rate bounds and
the pose box are both boxes, so their intersection stays a box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .curves import SafeCurve

POSE_MIN = np.array([0.2, -0.35, -0.35])
POSE_MAX = np.array([0.8, 0.35, 0.35])


@dataclass
class PoseCommand:
    z_b: float
    roll: float
    pitch: float

    def as_array(self) -> np.ndarray:
        return np.array([self.z_b, self.roll, self.pitch])

    @classmethod
    def from_array(cls, u) -> "PoseCommand":
        u = np.asarray(u, float).ravel()
        return cls(float(u[0]), float(u[1]), float(u[2]))

    def within_bounds(self, lo=POSE_MIN, hi=POSE_MAX, tol=1e-9) -> bool:
        u = self.as_array()
        return bool(np.all(u >= lo - tol) and np.all(u <= hi + tol))


def hip_height_from_pose(pose, hip_offset_base, yaw: float = 0.0) -> float:
    """z_h = z_b - x_h sin(pitch) + y_h cos(pitch) sin(roll)
                 + z_h^b cos(pitch) cos(roll).

    Yaw does not enter the vertical row of the rotation; the argument is
    kept for interface symmetry with the planar components.
    """
    if isinstance(pose, PoseCommand):
        z_b, beta, gamma = pose.z_b, pose.roll, pose.pitch
    else:
        z_b, beta, gamma = (float(v) for v in np.asarray(pose, float).ravel()[:3])
    x_h, y_h, z_h = (float(v) for v in np.asarray(hip_offset_base, float).ravel()[:3])
    del yaw
    return (
        z_b
        - x_h * np.sin(gamma)
        + y_h * np.cos(gamma) * np.sin(beta)
        + z_h * np.cos(gamma) * np.cos(beta)
    )


def _hip_heights_for(u, hip_offsets) -> np.ndarray:
    z_b, beta, gamma = u
    off = np.asarray(hip_offsets, float).reshape(-1, 3)
    return (
        z_b
        - off[:, 0] * np.sin(gamma)
        + off[:, 1] * np.cos(gamma) * np.sin(beta)
        + off[:, 2] * np.cos(gamma) * np.cos(beta)
    )


def pose_cost(
    curves,
    pose,
    hip_offsets,
    kind: str = "int",
    margin: float = 0.025,
    weights=None,
) -> float:
    """Safe-foothold objective at one pose (to be maximized).

    kind "sum":  sum of squared curve values
         "prod": product of squared curve values
         "int":  sum of squared margin integrals, approximated by
                 m*(F(z-m) + F(z+m)) per leg
    """
    u = pose.as_array() if isinstance(pose, PoseCommand) else np.asarray(pose, float)
    q = np.ones(len(curves)) if weights is None else np.asarray(weights, float)
    zs = _hip_heights_for(u, hip_offsets)
    if kind == "sum":
        vals = np.array([float(c(z)) for c, z in zip(curves, zs)])
        return float(np.sum(q * vals**2))
    if kind == "prod":
        vals = np.array([float(c(z)) for c, z in zip(curves, zs)])
        return float(np.prod(q * vals**2))
    if kind == "int":
        if margin <= 0.0:
            raise ValueError("integral cost needs a positive margin")
        vals = np.array(
            [margin * (float(c(z - margin)) + float(c(z + margin)))
             for c, z in zip(curves, zs)]
        )
        return float(np.sum(q * vals**2))
    raise ValueError(f"unknown cost kind {kind!r}")


@dataclass
class PoseOptResult:
    pose: PoseCommand
    cost: float
    converged: bool
    sequence: list = field(default_factory=list)   # receding horizon poses


def _box(previous, bounds_lo, bounds_hi, rate_lo, rate_hi):
    lo = np.maximum(bounds_lo, previous + rate_lo)
    hi = np.minimum(bounds_hi, previous + rate_hi)
    # a previous pose outside the box (e.g. after a bound change) still must
    # produce a valid box
    return lo, np.maximum(hi, lo)


def _scan_then_polish(f_cost, lo, hi, starts, grid=(17, 9, 9)):
    """Deterministic coarse grid scan + local polish; returns (u*, cost*)."""
    axes = [np.linspace(lo[k], hi[k], grid[k]) for k in range(3)]
    zz, rr, pp = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([zz.ravel(), rr.ravel(), pp.ravel()], axis=1)
    vals = np.array([f_cost(u) for u in pts])
    order = np.argsort(-vals, kind="stable")
    cand = [pts[i] for i in order[:3]] + [np.clip(s, lo, hi) for s in starts]
    best_u, best_v = None, -np.inf
    ok = False
    for u0 in cand:
        res = minimize(
            lambda u: -f_cost(u), u0, method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
        )
        if -res.fun > best_v:
            best_v = float(-res.fun)
            best_u = np.asarray(res.x)
            ok = bool(res.success) or ok
    return best_u, best_v, ok


def pose_optimize_single(
    curves,
    previous: PoseCommand,
    hip_offsets,
    bounds=(POSE_MIN, POSE_MAX),
    rate_bounds=None,
    kind: str = "int",
    margin: float = 0.025,
    weights=None,
) -> PoseOptResult:
    """Single-horizon pose optimization, warm-started at the previous pose.

    The rate bounds rewrite to a box around the previous pose, so the search
    region stays a box. On solver failure the previous pose is returned with
    converged=False.
    """
    lo_b, hi_b = (np.asarray(b, float) for b in bounds)
    if rate_bounds is None:
        lo, hi = lo_b, hi_b
    else:
        r_lo, r_hi = (np.asarray(r, float) for r in rate_bounds)
        lo, hi = _box(previous.as_array(), lo_b, hi_b, r_lo, r_hi)

    def f_cost(u):
        return pose_cost(curves, u, hip_offsets, kind, margin, weights)

    try:
        u, v, ok = _scan_then_polish(f_cost, lo, hi, [previous.as_array()])
    except (ValueError, FloatingPointError):
        prev_clipped = np.clip(previous.as_array(), lo, hi)
        return PoseOptResult(PoseCommand.from_array(prev_clipped),
                             f_cost(prev_clipped), False)
    u = np.clip(u, lo, hi)
    prev_cost = f_cost(np.clip(previous.as_array(), lo, hi))
    if not ok and v < prev_cost:
        u, v = np.clip(previous.as_array(), lo, hi), prev_cost
        return PoseOptResult(PoseCommand.from_array(u), v, False)
    return PoseOptResult(PoseCommand.from_array(u), v, True)


def pose_optimize_receding(
    curve_sets,
    previous: PoseCommand,
    hip_offsets,
    bounds=(POSE_MIN, POSE_MAX),
    rate_bounds=None,
    kind: str = "int",
    margin: float = 0.025,
    weights=None,
    smoothness_weight: float = 1.0,
) -> PoseOptResult:
    """Receding-horizon pose optimization.

    curve_sets[j] holds the four per-leg curves of horizon j (heightmaps
    displaced along the travel direction). The objective is the sum of the
    per-horizon costs minus a smoothness penalty on consecutive poses; the
    first pose is emitted. Rate bounds constrain the emitted pose against
    the previously emitted one.
    """
    n_h = len(curve_sets)
    if n_h == 0:
        raise ValueError("need at least one horizon")
    lo_b, hi_b = (np.asarray(b, float) for b in bounds)
    if n_h == 1:
        res = pose_optimize_single(
            curve_sets[0], previous, hip_offsets, bounds, rate_bounds, kind,
            margin, weights,
        )
        res.sequence = [res.pose]
        return res

    if rate_bounds is None:
        lo1, hi1 = lo_b, hi_b
    else:
        r_lo, r_hi = (np.asarray(r, float) for r in rate_bounds)
        lo1, hi1 = _box(previous.as_array(), lo_b, hi_b, r_lo, r_hi)
    lo = np.concatenate([lo1] + [lo_b] * (n_h - 1))
    hi = np.concatenate([hi1] + [hi_b] * (n_h - 1))

    def f_total(uu):
        us = uu.reshape(n_h, 3)
        total = sum(
            pose_cost(curve_sets[j], us[j], hip_offsets, kind, margin, weights)
            for j in range(n_h)
        )
        smooth = sum(
            float(np.linalg.norm(us[j] - us[j + 1])) for j in range(n_h - 1)
        )
        return total - smoothness_weight * smooth

    # starts: hold the previous pose; chain the per-horizon single solutions
    singles = []
    prev_j = previous
    for j in range(n_h):
        rj = pose_optimize_single(
            curve_sets[j], prev_j, hip_offsets, bounds,
            rate_bounds if j == 0 else None, kind, margin, weights,
        )
        singles.append(rj.pose.as_array())
        prev_j = rj.pose
    starts = [
        np.tile(np.clip(previous.as_array(), lo_b, hi_b), n_h),
        np.concatenate(singles),
        np.tile(singles[0], n_h),
    ]
    best_u, best_v = None, -np.inf
    ok = False
    for u0 in starts:
        res = minimize(
            lambda u: -f_total(u), np.clip(u0, lo, hi), method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
        )
        if -res.fun > best_v:
            best_v = float(-res.fun)
            best_u = np.asarray(res.x)
            ok = bool(res.success) or ok
    if best_u is None:
        out = PoseOptResult(previous, -np.inf, False)
        out.sequence = [previous] * n_h
        return out
    us = np.clip(best_u.reshape(n_h, 3), lo_b, hi_b)
    us[0] = np.clip(us[0], lo1, hi1)
    seq = [PoseCommand.from_array(u) for u in us]
    out = PoseOptResult(seq[0], best_v, ok)
    out.sequence = seq
    return out


def tbr_baseline(footholds, standoff: float) -> tuple[PoseCommand, bool]:
    """Plane-fit pose baseline from the four selected footholds.

    Fits a least-squares plane, reads roll/pitch off its normal (yaw zero)
    and sets the height a constant vertical standoff above the plane center.
    Degenerate (collinear) footholds fall back to a flat pose; the second
    return value is False in that case.
    """
    pts = np.asarray(footholds, float).reshape(-1, 3)
    centroid = pts.mean(axis=0)
    _, svals, vt = np.linalg.svd(pts - centroid)
    if svals[1] < 1e-9:  # collinear or coincident points: no plane
        return PoseCommand(float(centroid[2] + standoff), 0.0, 0.0), False
    n = vt[2]
    if n[2] < 0:
        n = -n
    # base z axis in world for roll beta, pitch gamma (yaw 0):
    #   (sin g cos b, -sin b, cos g cos b) == n
    beta = float(-np.arcsin(np.clip(n[1], -1.0, 1.0)))
    cb = np.cos(beta)
    gamma = float(np.arcsin(np.clip(n[0] / cb if abs(cb) > 1e-9 else 0.0, -1.0, 1.0)))
    return PoseCommand(float(centroid[2] + standoff), beta, gamma), True
