"""Heightmap foothold-evaluation criteria.

Every criterion maps a heightmap patch (centered on a leg's hip projection,
axes aligned with the robot's horizontal frame) to a boolean sub-mask of safe
candidate footholds; the combined mask is their AND followed by an erosion
that discards footholds within a radius of unsafe ones.

Criteria:
  TR  terrain roughness: neighbor-slope mean/std thresholds
  LC  leg collision: swept thigh/shank lines vs the heightfield
  KF  kinematic feasibility: workspace at touchdown, next lift-off, and
      along the swing path
  FC  foot-trajectory collision: sampled swing path vs the heightfield
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Heightmap:
    """2.5D terrain patch in the horizontal frame; row i -> x, column j -> y."""

    heights: np.ndarray
    resolution: float = 0.02
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self) -> None:
        self.heights = np.asarray(self.heights, dtype=float)
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        if self.heights.ndim != 2:
            raise ValueError("heights must be a 2D grid")
        if not np.all(np.isfinite(self.heights)):
            raise ValueError("heights must be finite")
        if self.resolution <= 0.0:
            raise ValueError("resolution must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.heights.shape

    @classmethod
    def flat(cls, value: float = 0.0, size: int = 33, resolution: float = 0.02,
             center=(0.0, 0.0)) -> "Heightmap":
        origin = np.asarray(center, float) - resolution * (size - 1) / 2.0
        return cls(np.full((size, size), float(value)), resolution, origin)

    @property
    def center(self) -> np.ndarray:
        n_x, n_y = self.heights.shape
        return self.origin + self.resolution * np.array(
            [(n_x - 1) / 2.0, (n_y - 1) / 2.0]
        )

    def cell_xy(self, i, j) -> np.ndarray:
        """World xy of cell centers; accepts arrays."""
        return np.stack(
            [self.origin[0] + self.resolution * np.asarray(i),
             self.origin[1] + self.resolution * np.asarray(j)], axis=-1
        )

    def xy_grid(self) -> tuple[np.ndarray, np.ndarray]:
        n_x, n_y = self.heights.shape
        x = self.origin[0] + self.resolution * np.arange(n_x)
        y = self.origin[1] + self.resolution * np.arange(n_y)
        return np.meshgrid(x, y, indexing="ij")

    def sample(self, x, y) -> np.ndarray:
        """Nearest-cell height lookup, edges clamped."""
        i = np.rint((np.asarray(x) - self.origin[0]) / self.resolution).astype(int)
        j = np.rint((np.asarray(y) - self.origin[1]) / self.resolution).astype(int)
        i = np.clip(i, 0, self.heights.shape[0] - 1)
        j = np.clip(j, 0, self.heights.shape[1] - 1)
        return self.heights[i, j]

    def save(self, path) -> None:
        """ASCII format: three header lines (rows, cols, resolution), then
        one whitespace-separated row of heights per line."""
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{self.heights.shape[0]}\n{self.heights.shape[1]}\n")
            f.write(f"{self.resolution!r}\n")
            for row in self.heights:
                f.write(" ".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path) -> "Heightmap":
        with open(path, "r", encoding="utf-8") as f:
            rows = int(f.readline())
            cols = int(f.readline())
            res = float(f.readline())
            data = np.loadtxt(f)
        data = np.asarray(data, dtype=float).reshape(rows, cols)
        return cls(data, res)


@dataclass
class GaitParams:
    step_length: float = 0.1
    step_frequency: float = 0.7
    duty_factor: float = 0.65
    time_to_touchdown: float = 0.2

    def __post_init__(self) -> None:
        if not (0.0 < self.duty_factor < 1.0):
            raise ValueError("duty factor must be in (0, 1)")
        if self.step_frequency <= 0.0:
            raise ValueError("step frequency must be positive")

    @property
    def cycle_time(self) -> float:
        return 1.0 / self.step_frequency

    @property
    def stance_duration(self) -> float:
        return self.duty_factor / self.step_frequency

    @property
    def swing_duration(self) -> float:
        return (1.0 - self.duty_factor) / self.step_frequency


def default_swing_path(lift_off, target, step_height, s):
    """Chord interpolation with a sine-squared vertical bump; s in [0,1]."""
    lift_off = np.asarray(lift_off, float)
    target = np.asarray(target, float)
    s = np.asarray(s, float)[..., None]
    p = lift_off + (target - lift_off) * s
    p[..., 2] += step_height * np.sin(np.pi * s[..., 0]) ** 2
    return p


@dataclass
class FecConfig:
    """Geometry and thresholds shared by the criteria."""

    l1: float = 0.35
    l2: float = 0.35
    tr_mean_threshold: float = 0.6
    tr_std_threshold: float = 0.35
    clearance: float = 0.03
    body_clearance: float = 0.22      # hip (trunk underside) above terrain
    foot_radius: float = 0.02
    step_height: float = 0.14
    erosion_radius: int = 1           # cells
    lc_sweep_phases: int = 4
    lc_samples_per_link: int = 6
    path_samples: int = 9
    swing_path: object = None         # callable(lift_off, target, h, s)->pos

    @property
    def reach(self) -> float:
        return self.l1 + self.l2

    def swing(self, lift_off, target, s):
        fn = self.swing_path or default_swing_path
        return fn(lift_off, target, self.step_height, s)


@dataclass
class FecMask:
    """Final mask plus the per-criterion sub-masks kept for diagnostics."""

    mask: np.ndarray
    tr: np.ndarray
    lc: np.ndarray
    kf: np.ndarray
    fc: np.ndarray
    pre_erosion: np.ndarray


def eval_tr(hm: Heightmap, mean_threshold: float = 0.6,
            std_threshold: float = 0.35) -> np.ndarray:
    """Terrain-roughness sub-mask from 8-neighborhood slope statistics."""
    h = hm.heights
    res = hm.resolution
    n_x, n_y = h.shape
    pad = np.full((n_x + 2, n_y + 2), np.nan)
    pad[1:-1, 1:-1] = h
    slopes = []
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            dist = res * float(np.hypot(di, dj))
            nb = pad[1 + di : 1 + di + n_x, 1 + dj : 1 + dj + n_y]
            slopes.append(np.abs(nb - h) / dist)
    slopes = np.stack(slopes)
    with np.errstate(invalid="ignore"):
        mean = np.nanmean(slopes, axis=0)
        std = np.nanstd(slopes, axis=0)
    return (mean <= mean_threshold) & (std <= std_threshold)


def _hip_track(hm: Heightmap, twist, gait: GaitParams):
    """Hip xy at touchdown and next lift-off (the map is hip-centered now)."""
    v_xy = np.asarray(twist, float).reshape(-1)[:2]
    hip_now = hm.center
    hip_td = hip_now + v_xy * gait.time_to_touchdown
    hip_lo = hip_td + v_xy * gait.stance_duration
    return hip_now, hip_td, hip_lo, v_xy


def _lift_off_point(hm: Heightmap, twist, gait: GaitParams) -> np.ndarray:
    """Nominal previous lift-off: half a step behind the hip at swing start."""
    v_xy = np.asarray(twist, float).reshape(-1)[:2]
    hip_now = hm.center
    t_swing_start = gait.time_to_touchdown - gait.swing_duration
    xy = hip_now + v_xy * t_swing_start - np.array([gait.step_length / 2.0, 0.0])
    return np.array([xy[0], xy[1], float(hm.sample(xy[0], xy[1]))])


def _knee_points(hip, feet, cfg: FecConfig):
    """Planar two-link knee positions, knee-backward, vectorized over feet.

    The knee is solved in the vertical plane through hip and foot; its
    lateral placement follows the hip->foot direction, its sagittal offset
    points backward (-x), matching the leg convention of the robot model.
    """
    d = feet - hip                      # (...,3)
    d_xy = d[..., :2]
    horiz = np.linalg.norm(d_xy, axis=-1)
    rho = np.sqrt(horiz**2 + d[..., 2] ** 2)
    rho = np.clip(rho, abs(cfg.l1 - cfg.l2) + 1e-9, cfg.reach - 1e-9)
    cos_psi = (cfg.l1**2 + rho**2 - cfg.l2**2) / (2.0 * cfg.l1 * rho)
    psi = np.arccos(np.clip(cos_psi, -1.0, 1.0))
    # unit vector hip->foot and the backward (-x) in-plane perpendicular
    u = d / np.maximum(rho, 1e-12)[..., None]
    # in the vertical plane spanned by u and z: perp = normalize(z - (z.u)u),
    # flipped so it points toward -x (knee-backward); a vertical leg line
    # degenerates and falls back to -x directly
    z_axis = np.array([0.0, 0.0, 1.0])
    perp = z_axis - u * u[..., 2:3]
    nrm = np.linalg.norm(perp, axis=-1, keepdims=True)
    perp = np.divide(perp, nrm, out=np.zeros_like(perp), where=nrm > 1e-9)
    perp[..., 0] = np.where(nrm[..., 0] <= 1e-9, -1.0, perp[..., 0])
    sign = np.where(perp[..., 0] > 0.0, -1.0, 1.0)
    perp = perp * sign[..., None]
    knee = hip + cfg.l1 * (
        u * np.cos(psi)[..., None] + perp * np.sin(psi)[..., None]
    )
    return knee


def eval_lc(hm: Heightmap, hip_height: float, cfg: FecConfig,
            gait: GaitParams, twist=np.zeros(6)) -> np.ndarray:
    """Leg-collision sub-mask: swept thigh+shank lines vs the heightfield.

    A candidate fails when any interior sample of either link comes within
    the clearance of the terrain at any sweep phase of the stance window, or
    when the hip itself (trunk underside) dips below the body clearance.
    """
    _, hip_td, hip_lo, _ = _hip_track(hm, twist, gait)
    X, Y = hm.xy_grid()
    feet = np.stack([X, Y, hm.heights], axis=-1).reshape(-1, 3)  # (N,3)
    ok = np.ones(feet.shape[0], dtype=bool)
    phases = np.linspace(0.0, 1.0, cfg.lc_sweep_phases)
    # interior samples only: the foot end necessarily touches the terrain
    t_thigh = np.linspace(0.15, 0.95, cfg.lc_samples_per_link)
    t_shank = np.linspace(0.05, 0.80, cfg.lc_samples_per_link)
    for ph in phases:
        hip_xy = hip_td + (hip_lo - hip_td) * ph
        hip = np.array([hip_xy[0], hip_xy[1], float(hip_height)])
        if hip[2] - float(hm.sample(hip[0], hip[1])) < cfg.body_clearance:
            ok[:] = False
            break
        knee = _knee_points(hip, feet, cfg)
        for tset, a, b in ((t_thigh, hip, knee), (t_shank, knee, feet)):
            # a or b may be a single point; broadcast to (S,N,3)
            pa = np.broadcast_to(a, feet.shape) if np.ndim(a) == 1 else a
            pts = pa[None] + (b - pa)[None] * tset[:, None, None]
            terr = hm.sample(pts[..., 0], pts[..., 1])
            ok &= ~np.any(pts[..., 2] - terr < cfg.clearance, axis=0)
    return ok.reshape(hm.heights.shape)


def eval_kf(hm: Heightmap, hip_height: float, cfg: FecConfig,
            twist=np.zeros(6), gait: GaitParams | None = None) -> np.ndarray:
    """Kinematic-feasibility sub-mask.

    A candidate is safe iff it is inside the leg workspace (a reach-radius
    sphere under the hip) at touchdown and at the next lift-off, and the
    swing path from the previous lift-off stays inside the workspace of the
    moving hip.
    """
    gait = gait or GaitParams()
    _, hip_td, hip_lo, v_xy = _hip_track(hm, twist, gait)
    X, Y = hm.xy_grid()
    feet = np.stack([X, Y, hm.heights], axis=-1).reshape(-1, 3)
    z_h = float(hip_height)
    reach2 = cfg.reach**2

    def inside(hip_xy, pts):
        d = pts - np.array([hip_xy[0], hip_xy[1], z_h])
        return np.einsum("...i,...i->...", d, d) <= reach2

    ok = inside(hip_td, feet) & inside(hip_lo, feet)
    # swing path inside the workspace of the hip moving toward touchdown
    p_lo = _lift_off_point(hm, twist, gait)
    s = np.linspace(0.0, 1.0, cfg.path_samples)
    path = cfg.swing(p_lo, feet, s[:, None])          # (S,N,3)
    t_now = gait.time_to_touchdown - gait.swing_duration * (1.0 - s)
    hip_s = hm.center[None, :] + v_xy[None, :] * t_now[:, None]
    hip_pts = np.empty_like(path)
    hip_pts[..., 0] = hip_s[:, None, 0]
    hip_pts[..., 1] = hip_s[:, None, 1]
    hip_pts[..., 2] = z_h
    d = path - hip_pts
    ok &= np.all(np.einsum("...i,...i->...", d, d) <= reach2, axis=0)
    return ok.reshape(hm.heights.shape)


def eval_fc(hm: Heightmap, cfg: FecConfig, twist=np.zeros(6),
            gait: GaitParams | None = None) -> np.ndarray:
    """Foot-trajectory-collision sub-mask: sampled swing path vs terrain."""
    gait = gait or GaitParams()
    p_lo = _lift_off_point(hm, twist, gait)
    X, Y = hm.xy_grid()
    feet = np.stack([X, Y, hm.heights], axis=-1).reshape(-1, 3)
    s = np.linspace(0.05, 0.95, cfg.path_samples)
    path = cfg.swing(p_lo, feet, s[:, None])          # (S,N,3)
    terr = hm.sample(path[..., 0], path[..., 1])
    collide = np.any(path[..., 2] < terr - 1e-9, axis=0)
    return (~collide).reshape(hm.heights.shape)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Any true cell within Chebyshev `radius` of a false cell becomes false."""
    if radius <= 0:
        return mask.copy()
    out = mask.copy()
    n_x, n_y = mask.shape
    false_pad = np.ones((n_x + 2 * radius, n_y + 2 * radius), dtype=bool)
    false_pad[radius:-radius, radius:-radius] = mask
    for di in range(-radius, radius + 1):
        for dj in range(-radius, radius + 1):
            if di == 0 and dj == 0:
                continue
            out &= false_pad[radius + di : radius + di + n_x,
                             radius + dj : radius + dj + n_y]
    return out


def fec(
    hm: Heightmap,
    hip_height: float,
    twist=np.zeros(6),
    gait: GaitParams | None = None,
    cfg: FecConfig | None = None,
    erosion_radius: int | None = None,
) -> FecMask:
    """Combined criteria: elementwise AND of the sub-masks, then erosion.

    Cells outside the map are treated as continuing the edge heights.
    """
    gait = gait or GaitParams()
    cfg = cfg or FecConfig()
    radius = cfg.erosion_radius if erosion_radius is None else erosion_radius
    tr = eval_tr(hm, cfg.tr_mean_threshold, cfg.tr_std_threshold)
    lc = eval_lc(hm, hip_height, cfg, gait, twist)
    kf = eval_kf(hm, hip_height, cfg, twist, gait)
    fc = eval_fc(hm, cfg, twist, gait)
    pre = tr & lc & kf & fc
    return FecMask(mask=erode(pre, radius), tr=tr, lc=lc, kf=kf, fc=fc,
                   pre_erosion=pre)
