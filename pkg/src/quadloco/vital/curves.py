"""Safe-foothold counting, foothold selection, and the hip-height curves.

pose_evaluation sweeps the criteria over a set of hip heights and counts the
safe cells; fit_rbf compresses those samples into a Gaussian radial-basis
curve that the pose optimizer can evaluate anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fec import FecConfig, FecMask, GaitParams, Heightmap, fec

HIP_HEIGHT_RANGE = (0.2, 0.8)
N_HEIGHT_SAMPLES = 31     # 0.2 .. 0.8 at 0.02 m
DEFAULT_BASES = 30


def nsf(mask) -> int:
    """Number of safe footholds: true cells of the (final) mask."""
    if isinstance(mask, FecMask):
        mask = mask.mask
    return int(np.count_nonzero(mask))


def vfa_select(mask, hm: Heightmap, nominal_xy):
    """Closest safe cell to the nominal foothold.

    Ties break deterministically to the lowest row-major index. Returns the
    (i, j, position) of the chosen cell, or None when the mask is all-false
    (callers hold the previous foothold and flag).
    """
    if isinstance(mask, FecMask):
        mask = mask.mask
    safe = np.flatnonzero(mask.ravel())
    if safe.size == 0:
        return None
    n_y = mask.shape[1]
    ii, jj = safe // n_y, safe % n_y
    xy = hm.cell_xy(ii, jj)
    d2 = np.sum((xy - np.asarray(nominal_xy, float)[:2]) ** 2, axis=1)
    k = int(np.argmin(d2))  # argmin returns the first (row-major) minimum
    i, j = int(ii[k]), int(jj[k])
    pos = np.array([xy[k, 0], xy[k, 1], hm.heights[i, j]])
    return i, j, pos


def hip_heights() -> np.ndarray:
    return np.linspace(HIP_HEIGHT_RANGE[0], HIP_HEIGHT_RANGE[1], N_HEIGHT_SAMPLES)


def pose_evaluation(
    hm: Heightmap,
    twist=np.zeros(6),
    gait: GaitParams | None = None,
    cfg: FecConfig | None = None,
    heights: np.ndarray | None = None,
    evaluator=None,
) -> list[tuple[float, int]]:
    """(hip height, safe-foothold count) samples for one leg's heightmap.

    `evaluator` is the seam for an approximate (learned) criteria evaluator:
    it must map (hm, z_h, twist, gait) -> mask-like; the default is the exact
    criteria stack.
    """
    gait = gait or GaitParams()
    cfg = cfg or FecConfig()
    zs = hip_heights() if heights is None else np.asarray(heights, float)
    out = []
    for z_h in zs:
        if evaluator is not None:
            mask = evaluator(hm, float(z_h), twist, gait)
        else:
            mask = fec(hm, float(z_h), twist, gait, cfg)
        out.append((float(z_h), nsf(mask)))
    return out


@dataclass
class SafeCurve:
    """Gaussian-RBF approximation of the safe-foothold count vs hip height."""

    weights: np.ndarray
    centers: np.ndarray
    widths: np.ndarray     # standard deviations

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, float).ravel()
        self.centers = np.asarray(self.centers, float).ravel()
        self.widths = np.asarray(self.widths, float).ravel()

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        d = (z[..., None] - self.centers) / self.widths
        return np.exp(-0.5 * d * d) @ self.weights

    @property
    def peak(self) -> float:
        return float(np.max(self(hip_heights())))


def rbf_basis(E: int = DEFAULT_BASES, bounds=HIP_HEIGHT_RANGE):
    """Equidistant centers; widths from the 0.5-intersection rule (adjacent
    Gaussians cross at half height)."""
    centers = np.linspace(bounds[0], bounds[1], E)
    spacing = (bounds[1] - bounds[0]) / (E - 1) if E > 1 else (bounds[1] - bounds[0])
    sigma = (spacing / 2.0) / np.sqrt(2.0 * np.log(2.0))
    return centers, np.full(E, sigma)


def fit_rbf(
    samples,
    E: int = DEFAULT_BASES,
    centers: np.ndarray | None = None,
    widths: np.ndarray | None = None,
    ridge: float = 1e-8,
) -> SafeCurve:
    """Least-squares RBF fit of (z_h, count) samples.

    Falls back to a ridge solve when the design matrix is rank-deficient.
    """
    samples = np.asarray(samples, dtype=float).reshape(-1, 2)
    z, y = samples[:, 0], samples[:, 1]
    if centers is None or widths is None:
        centers, widths = rbf_basis(E)
    d = (z[:, None] - centers) / widths
    Phi = np.exp(-0.5 * d * d)
    w, _, rank, _ = np.linalg.lstsq(Phi, y, rcond=None)
    if rank < centers.size:
        w = np.linalg.solve(Phi.T @ Phi + ridge * np.eye(centers.size), Phi.T @ y)
    return SafeCurve(w, centers, widths)
