"""Compliant-contact modeling and online terrain-compliance estimation.

The contact model is a per-leg Kelvin-Voigt impedance: 3D linear springs and
dampers, diagonal in a contact frame that is frozen at touchdown. The
estimator regresses ground-reaction forces against penetration (and
optionally penetration rate) over a sliding window, independently per leg and
per contact-frame direction, with exponentially decaying sample weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    NUM_JOINTS,
    NUM_LEGS,
    DynamicsQuantities,
    RobotModel,
    forward_kinematics,
)

DIRECTIONS = ("t1", "t2", "n")  # contact-frame axes; the normal is z
NORMAL_DIR = 2


@dataclass
class KelvinVoigtParams:
    """Per-leg terrain impedance: diagonal in the contact frame."""

    stiffness: np.ndarray                 # (4,3) diagonal entries, N/m
    damping: np.ndarray                   # (4,3) diagonal entries, N s/m
    rotations: np.ndarray | None = None   # (4,3,3) world -> contact, frozen at TD

    def __post_init__(self) -> None:
        self.stiffness = np.asarray(self.stiffness, dtype=float).reshape(NUM_LEGS, 3)
        self.damping = np.asarray(self.damping, dtype=float).reshape(NUM_LEGS, 3)
        if self.rotations is None:
            self.rotations = np.tile(np.eye(3), (NUM_LEGS, 1, 1))
        else:
            self.rotations = np.asarray(self.rotations, dtype=float).reshape(
                NUM_LEGS, 3, 3
            )
        if np.any(self.stiffness < 0.0) or np.any(self.damping < 0.0):
            raise ValueError("impedance entries must be non-negative")

    @classmethod
    def uniform(cls, k: float, d: float) -> "KelvinVoigtParams":
        return cls(np.full((NUM_LEGS, 3), k), np.full((NUM_LEGS, 3), d))

    def world_stiffness(self, leg: int) -> np.ndarray:
        """Dense world-frame stiffness R^T K_c R for one leg."""
        R = self.rotations[leg]
        return R.T @ np.diag(self.stiffness[leg]) @ R

    def world_damping(self, leg: int) -> np.ndarray:
        R = self.rotations[leg]
        return R.T @ np.diag(self.damping[leg]) @ R


@dataclass
class ContactSample:
    """One tick of contact states for one leg."""

    t: float
    leg: int
    alpha: int                       # contact flag
    grf_world: np.ndarray            # (3,)
    penetration_world: np.ndarray    # (3,)
    rate_world: np.ndarray           # (3,)
    touchdown_world: np.ndarray      # (3,)
    grf_contact: np.ndarray | None = None
    penetration_contact: np.ndarray | None = None
    rate_contact: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.alpha == 0 and np.any(self.grf_world != 0.0):
            raise ValueError("no-contact samples must carry zero GRF")


def estimate_grf_all(
    dyn: DynamicsQuantities,
    tau_j: np.ndarray,
    qdd: np.ndarray | None = None,
) -> np.ndarray:
    """GRFs of all legs from the actuated dynamics, world frame, (4,3).

    Solves J_j^T F = M_a qdd + h_j - tau for the stacked foot forces. In CoM
    coordinates the joint columns of the foot Jacobians carry a small
    cross-leg coupling, so the four legs are solved jointly.
    """
    tau_j = np.asarray(tau_j, dtype=float).reshape(NUM_JOINTS)
    rhs = dyn.h_j - tau_j
    if qdd is not None:
        rhs = rhs + dyn.M_a @ np.asarray(qdd, dtype=float).reshape(18)
    JT = np.hstack([dyn.foot_jacobians[leg][:, 6:].T for leg in range(NUM_LEGS)])
    return np.linalg.solve(JT, rhs).reshape(NUM_LEGS, 3)


def estimate_grf(
    dyn: DynamicsQuantities,
    tau_j: np.ndarray,
    leg: int,
    qdd: np.ndarray | None = None,
    alpha: int = 1,
    singular_tol: float = 1e-8,
) -> np.ndarray | None:
    """GRF of one leg: F = alpha * J^{-T} (M_a qdd + h_j - tau).

    Returns None when the leg Jacobian is near singular (sample skipped).
    """
    if alpha == 0:
        return np.zeros(3)
    J = dyn.joint_jacobians_base[leg]
    if abs(np.linalg.det(J)) < singular_tol:
        return None
    return estimate_grf_all(dyn, tau_j, qdd=qdd)[leg]


def contact_status(
    dyn: DynamicsQuantities,
    tau_j: np.ndarray,
    leg: int,
    normal: np.ndarray,
    f_min_threshold: float,
    qdd: np.ndarray | None = None,
) -> int:
    """1 iff the normal-projected estimated force reaches the threshold.

    No hysteresis: near the threshold the output chatters, which is the
    documented behavior of a pure force threshold.
    """
    normal = np.asarray(normal, dtype=float).reshape(3)
    if abs(np.linalg.norm(normal) - 1.0) > 1e-6:
        raise ValueError("normal must be a unit vector")
    f = estimate_grf(dyn, tau_j, leg, qdd=qdd, alpha=1)
    if f is None:
        return 0
    return int(normal @ f >= f_min_threshold)


def estimate_penetration(
    model: RobotModel,
    base_position: np.ndarray,
    orientation: np.ndarray,
    base_velocity: np.ndarray,
    omega: np.ndarray,
    q_j: np.ndarray,
    qd_j: np.ndarray,
    x_td: np.ndarray,
    leg: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Penetration and rate of one stance foot from base + joint states.

        p = x_td - (x_b + R x_f^B)
        pdot = -(v_b + R v_f^B + w x (R x_f^B))
    """
    if x_td is None:
        raise ValueError("no touchdown anchor recorded for this leg")
    R = np.asarray(orientation, dtype=float)
    x_fb = forward_kinematics(model, q_j, leg)
    # base-frame foot velocity from the leg joint block
    from .dynamics import leg_jacobian_base

    v_fb = leg_jacobian_base(model, q_j, leg) @ np.asarray(qd_j, float).reshape(
        NUM_LEGS, 3
    )[leg]
    p = np.asarray(x_td, float) - (np.asarray(base_position, float) + R @ x_fb)
    v_world = (
        np.asarray(base_velocity, float)
        + R @ v_fb
        + np.cross(np.asarray(omega, float), R @ x_fb)
    )
    return p, -v_world


def to_contact_frame(sample: ContactSample, rotation: np.ndarray) -> ContactSample:
    """Populate the contact-frame fields by rotating the world-frame ones.

    The rotation is frozen since touchdown, so the rate transforms linearly.
    """
    R = np.asarray(rotation, dtype=float)
    sample.grf_contact = R @ sample.grf_world
    sample.penetration_contact = R @ sample.penetration_world
    sample.rate_contact = R @ sample.rate_world
    return sample


@dataclass
class EstimatorBuffers:
    """Ring buffers of (GRF, penetration, rate), per leg per direction."""

    window: int = 250
    F: np.ndarray = field(init=False)   # (4,3,window)
    P: np.ndarray = field(init=False)   # (4,3,window)
    Pd: np.ndarray = field(init=False)  # (4,3,window)
    count: np.ndarray = field(init=False)
    head: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.F = np.zeros((NUM_LEGS, 3, self.window))
        self.P = np.zeros((NUM_LEGS, 3, self.window))
        self.Pd = np.zeros((NUM_LEGS, 3, self.window))
        self.count = np.zeros(NUM_LEGS, dtype=int)
        self.head = np.zeros(NUM_LEGS, dtype=int)

    def push(self, leg: int, f_c: np.ndarray, p_c: np.ndarray, pd_c: np.ndarray) -> None:
        """Append one in-contact sample for a leg (all three directions)."""
        k = self.head[leg]
        self.F[leg, :, k] = f_c
        self.P[leg, :, k] = p_c
        self.Pd[leg, :, k] = pd_c
        self.head[leg] = (k + 1) % self.window
        self.count[leg] = min(self.count[leg] + 1, self.window)

    def full(self, leg: int) -> bool:
        return self.count[leg] >= self.window

    def ordered(self, leg: int, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Samples oldest -> newest for one leg and direction."""
        n = self.count[leg]
        idx = (self.head[leg] - n + np.arange(n)) % self.window
        return self.F[leg, d, idx], self.P[leg, d, idx], self.Pd[leg, d, idx]


@dataclass
class ImpedanceEstimate:
    """Latest per-leg, per-direction impedance estimate with rolling stats."""

    stiffness: np.ndarray = field(default_factory=lambda: np.zeros((NUM_LEGS, 3)))
    damping: np.ndarray = field(default_factory=lambda: np.zeros((NUM_LEGS, 3)))
    valid: np.ndarray = field(default_factory=lambda: np.zeros((NUM_LEGS, 3), bool))
    low_confidence: np.ndarray = field(
        default_factory=lambda: np.zeros((NUM_LEGS, 3), bool)
    )
    mean: np.ndarray = field(default_factory=lambda: np.zeros((NUM_LEGS, 3)))
    std: np.ndarray = field(default_factory=lambda: np.zeros((NUM_LEGS, 3)))


def tce_step(
    buffers: EstimatorBuffers,
    leg: int,
    direction: int,
    decay: float = 0.995,
    estimate_damping: bool = False,
    condition_limit: float = 1e8,
    min_regressor: float = 1e-6,
):
    """Weighted least squares over one leg/direction buffer.

    Returns (k_hat, d_hat) or None when the buffer is not full or the
    regressor is too weak/ill-conditioned (previous estimate should be kept).
    """
    if not buffers.full(leg):
        return None
    f, p, pd = buffers.ordered(leg, direction)
    m = f.size
    # newest sample has weight 1, older ones decay
    w = decay ** np.arange(m - 1, -1, -1)
    if estimate_damping:
        P = np.column_stack([p, pd])
        A = P.T @ (w[:, None] * P)
        if np.linalg.cond(A) > condition_limit:
            return None
        sol = np.linalg.solve(A, P.T @ (w * f))
        return float(sol[0]), float(sol[1])
    denom = float(p @ (w * p))
    if denom < min_regressor**2 * m:
        return None
    k_hat = float((p @ (w * f)) / denom)
    return k_hat, 0.0


class ComplianceEstimator:
    """Online terrain-compliance estimation over a sliding sample window.

    Legs are fully decoupled. The default mode estimates the normal-direction
    stiffness only and copies it to the tangentials (the damping term is
    dominated by the stiffness term and feet-velocity noise would corrupt
    it); the joint stiffness+damping regression is available but less
    validated.
    """

    def __init__(
        self,
        window: int = 250,
        decay: float = 0.995,
        estimate_damping: bool = False,
        condition_limit: float = 1e8,
        min_regressor: float = 1e-6,
        low_confidence_penetration: float = 1e-3,
        stats_window: int = 2000,
    ):
        self.buffers = EstimatorBuffers(window=window)
        self.decay = decay
        self.estimate_damping = estimate_damping
        self.condition_limit = condition_limit
        self.min_regressor = min_regressor
        self.low_confidence_penetration = low_confidence_penetration
        self.stats_window = stats_window
        self.estimate = ImpedanceEstimate()
        self._history: list[list[float]] = [[] for _ in range(NUM_LEGS)]
        self._log: list[tuple] = []

    def step(self, sample: ContactSample, rotation: np.ndarray | None = None) -> ImpedanceEstimate:
        """Ingest one per-leg contact sample; returns the current estimate."""
        leg = sample.leg
        if sample.alpha != 1:
            return self.estimate
        R = np.eye(3) if rotation is None else rotation
        to_contact_frame(sample, R)
        self.buffers.push(
            leg, sample.grf_contact, sample.penetration_contact, sample.rate_contact
        )
        out = tce_step(
            self.buffers, leg, NORMAL_DIR, self.decay, self.estimate_damping,
            self.condition_limit, self.min_regressor,
        )
        if out is not None:
            k_hat, d_hat = out
            # normal-direction estimate, tangentials assumed equal
            self.estimate.stiffness[leg, :] = k_hat
            self.estimate.damping[leg, :] = d_hat
            self.estimate.valid[leg, :] = True
            hist = self._history[leg]
            hist.append(k_hat)
            if len(hist) > self.stats_window:
                del hist[: len(hist) - self.stats_window]
            self.estimate.mean[leg, :] = float(np.mean(hist))
            self.estimate.std[leg, :] = float(np.std(hist))
            _, p, _ = self.buffers.ordered(leg, NORMAL_DIR)
            self.estimate.low_confidence[leg, :] = (
                float(np.mean(np.abs(p))) < self.low_confidence_penetration
            )
        self._log.append(
            (
                sample.t,
                leg,
                float(sample.penetration_contact[NORMAL_DIR]),
                float(sample.rate_contact[NORMAL_DIR]),
                float(sample.grf_contact[NORMAL_DIR]),
                float(self.estimate.stiffness[leg, NORMAL_DIR]),
            )
        )
        return self.estimate

    def history(self, leg: int) -> np.ndarray:
        return np.asarray(self._history[leg])

    def write_csv(self, path) -> None:
        """Per-tick (t, leg, p_n, pdot_n, F_n, k_hat) rows."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "leg", "p_n", "pdot_n", "F_n", "k_hat"])
            wr.writerows(self._log)
