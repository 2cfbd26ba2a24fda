"""World-extent terrain: heights plus per-region compliance.

The world is a height function over xy plus a list of x-interval regions
carrying Kelvin-Voigt parameters. The named presets mirror the compliance
suite used throughout the scenarios: soft 3500, moderate 8000, stiff 10000,
rigid 2e6 N/m, all at 400 Ns/m damping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..vital import Heightmap

TERRAIN_PRESETS = {
    "T1": 3500.0,
    "T2": 8000.0,
    "T3": 10000.0,
    "T4": 2.0e6,
}
PRESET_DAMPING = 400.0


@dataclass
class TerrainRegion:
    x_min: float
    x_max: float
    stiffness: float
    damping: float


@dataclass
class TerrainWorld:
    regions: list = field(default_factory=list)
    height_fn: object = None            # callable(x, y) -> z; default flat 0
    mu: float = 0.7

    def __post_init__(self) -> None:
        if not self.regions:
            self.regions = [TerrainRegion(-np.inf, np.inf, 2.0e6, PRESET_DAMPING)]
        # every point must map to exactly one region
        xs = sorted((r.x_min, r.x_max) for r in self.regions)
        for (a0, a1), (b0, b1) in zip(xs, xs[1:]):
            if b0 < a1:
                raise ValueError("terrain regions overlap")

    def height(self, x, y):
        if self.height_fn is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.height_fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    def normal(self, x, y, eps: float = 1e-4) -> np.ndarray:
        hx = (self.height(x + eps, y) - self.height(x - eps, y)) / (2 * eps)
        hy = (self.height(x, y + eps) - self.height(x, y - eps)) / (2 * eps)
        n = np.array([-float(hx), -float(hy), 1.0])
        return n / np.linalg.norm(n)

    def impedance_at(self, x: float) -> tuple[float, float]:
        for r in self.regions:
            if r.x_min <= x < r.x_max:
                return r.stiffness, r.damping
        raise ValueError(f"x={x} outside every terrain region")

    def extract_heightmap(self, center_xy, size: int = 33,
                          resolution: float = 0.02) -> Heightmap:
        """Planner patch around a point, axes world-aligned (yaw zero)."""
        half = resolution * (size - 1) / 2.0
        origin = np.asarray(center_xy, float) - half
        x = origin[0] + resolution * np.arange(size)
        y = origin[1] + resolution * np.arange(size)
        X, Y = np.meshgrid(x, y, indexing="ij")
        return Heightmap(np.asarray(self.height(X, Y), float), resolution, origin)


def flat_world(preset: str = "T4", mu: float = 0.7) -> TerrainWorld:
    k = TERRAIN_PRESETS[preset]
    return TerrainWorld(
        regions=[TerrainRegion(-np.inf, np.inf, k, PRESET_DAMPING)], mu=mu
    )


def mixed_world(segments, mu: float = 0.7) -> TerrainWorld:
    """segments: list of (x_min, x_max, preset-or-stiffness)."""
    regions = []
    for x0, x1, s in segments:
        k = TERRAIN_PRESETS.get(s, None)
        k = float(s) if k is None else k
        regions.append(TerrainRegion(x0, x1, k, PRESET_DAMPING))
    return TerrainWorld(regions=regions, mu=mu)


def stairs_world(rise: float = 0.10, go: float = 0.25, n_steps: int = 4,
                 start_x: float = 0.6, preset: str = "T4",
                 descend_after: float | None = None) -> TerrainWorld:
    """Ascending stairs along +x starting at start_x; optional descent."""
    k = TERRAIN_PRESETS[preset]

    def height_fn(x, y):
        x = np.asarray(x, dtype=float)
        step = np.clip(np.floor((x - start_x) / go) + 1.0, 0.0, n_steps)
        z = rise * step
        if descend_after is not None:
            down = np.clip(
                np.floor((x - start_x - descend_after) / go) + 1.0, 0.0, n_steps
            )
            z = z - rise * down
        return z + np.zeros_like(np.asarray(y, dtype=float))

    return TerrainWorld(
        regions=[TerrainRegion(-np.inf, np.inf, k, PRESET_DAMPING)],
        height_fn=height_fn,
    )
