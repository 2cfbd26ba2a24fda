"""Floating-base rigid-body model of a 12-joint point-foot quadruped.

The model is a trunk plus four identical 3-link legs (HAA, HFE, KFE). The
generalized velocity vector used everywhere downstream is

    u = [v_com (3, world), omega (3, world), qd_j (12)]

i.e. the floating base is parameterized by the velocity of the *total* center
of mass rather than the base origin. In these coordinates the first three
rows of the inertia matrix are exactly [m*I 0 0] and the linear part of the
bias vector is exactly the weight vector, which is what the whole-body
controller's trunk-wrench bookkeeping relies on.

Leg order is LF, RF, LH, RH; joint order within a leg is HAA, HFE, KFE.
Zero joint angles mean a fully stretched leg pointing straight down from the
hip. HAA rotates about the base x axis, HFE and KFE about the (rotated) y
axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .so3 import is_rotation, skew

GRAVITY = 9.81
G_VEC = np.array([0.0, 0.0, -GRAVITY])

LEG_NAMES = ("LF", "RF", "LH", "RH")
NUM_LEGS = 4
NUM_JOINTS = 12
NV = 6 + NUM_JOINTS  # generalized-velocity dimension

_ZAXIS_DOWN = np.array([0.0, 0.0, -1.0])


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product for (..., 3) arrays; much faster than np.cross
    for the small batches used here."""
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


@dataclass
class RobotModel:
    """Kinematic/inertial parameters of the quadruped.

    All legs share geometry and limits; left/right and front/hind symmetry
    comes from the hip offsets alone.
    """

    trunk_mass: float
    trunk_inertia: np.ndarray            # 3x3, base frame, about the trunk CoM
    hip_offsets: np.ndarray              # 4x3, base frame
    link_masses: np.ndarray              # (3,) HAA assembly, upper, lower
    link_lengths: np.ndarray             # (2,) upper l1, lower l2
    q_min: np.ndarray                    # (3,) per-leg joint lower limits
    q_max: np.ndarray                    # (3,)
    qd_limit: np.ndarray                 # (3,) symmetric velocity limits
    tau_limit: np.ndarray                # (3,) symmetric torque limits
    link_radius: float = 0.03            # rod radius used for link inertias
    haa_body_radius: float = 0.05        # the HAA assembly is a small sphere

    def __post_init__(self) -> None:
        self.trunk_inertia = np.asarray(self.trunk_inertia, dtype=float)
        if self.trunk_inertia.shape == (3,):
            self.trunk_inertia = np.diag(self.trunk_inertia)
        self.hip_offsets = np.asarray(self.hip_offsets, dtype=float).reshape(4, 3)
        self.link_masses = np.asarray(self.link_masses, dtype=float).reshape(3)
        self.link_lengths = np.asarray(self.link_lengths, dtype=float).reshape(2)
        self.q_min = np.asarray(self.q_min, dtype=float).reshape(3)
        self.q_max = np.asarray(self.q_max, dtype=float).reshape(3)
        self.qd_limit = np.asarray(self.qd_limit, dtype=float).reshape(3)
        self.tau_limit = np.asarray(self.tau_limit, dtype=float).reshape(3)
        self._validate()
        # local link inertias (link frame, z along the link axis)
        m1, m2, m3 = self.link_masses
        l1, l2 = self.link_lengths
        r = self.link_radius
        i_sph = 0.4 * m1 * self.haa_body_radius**2
        self._inertia_haa = np.diag([i_sph, i_sph, i_sph])
        self._inertia_upper = np.diag(
            [m2 * l1**2 / 12.0, m2 * l1**2 / 12.0, 0.5 * m2 * r**2]
        )
        self._inertia_lower = np.diag(
            [m3 * l2**2 / 12.0, m3 * l2**2 / 12.0, 0.5 * m3 * r**2]
        )

    def _validate(self) -> None:
        if self.trunk_mass <= 0.0 or np.any(self.link_masses <= 0.0):
            raise ValueError("all masses must be positive")
        if np.any(self.link_lengths <= 0.0):
            raise ValueError("link lengths must be positive")
        if not np.allclose(self.trunk_inertia, self.trunk_inertia.T):
            raise ValueError("trunk inertia must be symmetric")
        if np.any(np.linalg.eigvalsh(self.trunk_inertia) <= 0.0):
            raise ValueError("trunk inertia must be positive-definite")
        if np.any(self.q_min >= self.q_max):
            raise ValueError("joint limits must satisfy lower < upper")
        if np.any(self.qd_limit <= 0.0) or np.any(self.tau_limit <= 0.0):
            raise ValueError("velocity/torque limits must be positive")

    @property
    def total_mass(self) -> float:
        return self.trunk_mass + NUM_LEGS * float(np.sum(self.link_masses))

    @property
    def leg_reach(self) -> float:
        return float(np.sum(self.link_lengths))

    # tiled 12-vector views of the per-leg limits
    @property
    def q_min_full(self) -> np.ndarray:
        return np.tile(self.q_min, NUM_LEGS)

    @property
    def q_max_full(self) -> np.ndarray:
        return np.tile(self.q_max, NUM_LEGS)

    @property
    def qd_limit_full(self) -> np.ndarray:
        return np.tile(self.qd_limit, NUM_LEGS)

    @property
    def tau_limit_full(self) -> np.ndarray:
        return np.tile(self.tau_limit, NUM_LEGS)

    def in_limits(self, q_j: np.ndarray) -> bool:
        q_j = np.asarray(q_j, dtype=float).reshape(NUM_JOINTS)
        return bool(
            np.all(q_j >= self.q_min_full - 1e-12)
            and np.all(q_j <= self.q_max_full + 1e-12)
        )


def desk_model() -> RobotModel:
    """Canonical 90 kg desk-scale model used by the test and scenario suites.

    50 kg trunk plus 10 kg per leg (4/4/2 over the three links) gives the
    90 kg total the acceptance numbers are derived from.
    """
    return RobotModel(
        trunk_mass=50.0,
        trunk_inertia=np.diag([1.42, 4.54, 5.21]),
        hip_offsets=np.array(
            [
                [0.37, 0.20, 0.0],   # LF
                [0.37, -0.20, 0.0],  # RF
                [-0.37, 0.20, 0.0],  # LH
                [-0.37, -0.20, 0.0], # RH
            ]
        ),
        link_masses=np.array([4.0, 4.0, 2.0]),
        link_lengths=np.array([0.35, 0.35]),
        q_min=np.array([-0.9, -1.8, -2.8]),
        q_max=np.array([0.9, 1.8, 0.0]),
        qd_limit=np.array([12.0, 12.0, 12.0]),
        tau_limit=np.array([150.0, 150.0, 150.0]),
    )


def load_robot_model(path: str | Path) -> RobotModel:
    """Load a RobotModel from a YAML file. See README for the key names."""
    with open(path, "r", encoding="utf-8") as f:
        cfg = yaml.safe_load(f)
    return RobotModel(
        trunk_mass=float(cfg["trunk_mass"]),
        trunk_inertia=np.asarray(cfg["trunk_inertia"], dtype=float),
        hip_offsets=np.asarray(cfg["hip_offsets"], dtype=float),
        link_masses=np.asarray(cfg["link_masses"], dtype=float),
        link_lengths=np.asarray(cfg["link_lengths"], dtype=float),
        q_min=np.asarray(cfg["q_min"], dtype=float),
        q_max=np.asarray(cfg["q_max"], dtype=float),
        qd_limit=np.asarray(cfg["qd_limit"], dtype=float),
        tau_limit=np.asarray(cfg["tau_limit"], dtype=float),
        link_radius=float(cfg.get("link_radius", 0.03)),
        haa_body_radius=float(cfg.get("haa_body_radius", 0.05)),
    )


def save_robot_model(model: RobotModel, path: str | Path) -> None:
    cfg = {
        "trunk_mass": float(model.trunk_mass),
        "trunk_inertia": model.trunk_inertia.tolist(),
        "hip_offsets": model.hip_offsets.tolist(),
        "link_masses": model.link_masses.tolist(),
        "link_lengths": model.link_lengths.tolist(),
        "q_min": model.q_min.tolist(),
        "q_max": model.q_max.tolist(),
        "qd_limit": model.qd_limit.tolist(),
        "tau_limit": model.tau_limit.tolist(),
        "link_radius": float(model.link_radius),
        "haa_body_radius": float(model.haa_body_radius),
    }
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(cfg, f, sort_keys=False)


@dataclass
class GeneralizedState:
    """Floating-base pose plus CoM twist plus joint state.

    ``twist`` is [v_com (world), omega (world)]; the configuration is carried
    by the base origin position and base->world rotation.
    """

    base_position: np.ndarray        # (3,)
    orientation: np.ndarray          # (3,3) base -> world
    twist: np.ndarray                # (6,) [v_com, omega], world frame
    q_j: np.ndarray                  # (12,)
    qd_j: np.ndarray                 # (12,)

    def __post_init__(self) -> None:
        self.base_position = np.asarray(self.base_position, dtype=float).reshape(3)
        self.orientation = np.asarray(self.orientation, dtype=float).reshape(3, 3)
        self.twist = np.asarray(self.twist, dtype=float).reshape(6)
        self.q_j = np.asarray(self.q_j, dtype=float).reshape(NUM_JOINTS)
        self.qd_j = np.asarray(self.qd_j, dtype=float).reshape(NUM_JOINTS)

    @property
    def v_com(self) -> np.ndarray:
        return self.twist[:3]

    @property
    def omega(self) -> np.ndarray:
        return self.twist[3:]

    def validate(self) -> None:
        for name, arr in (
            ("base_position", self.base_position),
            ("twist", self.twist),
            ("q_j", self.q_j),
            ("qd_j", self.qd_j),
        ):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
        if not is_rotation(self.orientation, tol=1e-6):
            raise ValueError("orientation is not a proper rotation matrix")

    def copy(self) -> "GeneralizedState":
        return GeneralizedState(
            self.base_position.copy(),
            self.orientation.copy(),
            self.twist.copy(),
            self.q_j.copy(),
            self.qd_j.copy(),
        )


@dataclass
class DynamicsQuantities:
    """Everything the controller and estimators need at one instant."""

    M: np.ndarray                    # 18x18 inertia, CoM coordinates
    h: np.ndarray                    # (18,) bias forces
    com_position: np.ndarray         # (3,) world
    foot_positions: np.ndarray       # 4x3 world
    foot_velocities: np.ndarray      # 4x3 world
    foot_positions_base: np.ndarray  # 4x3 base frame
    foot_velocities_base: np.ndarray # 4x3 base frame (time derivative seen in base)
    foot_jacobians: np.ndarray       # 4x3x18, CoM coordinates
    foot_bias_accels: np.ndarray     # 4x3  (Jdot * u products)
    joint_jacobians_base: np.ndarray # 4x3x3 base-frame joint blocks
    stance_set: np.ndarray           # (4,) bool
    base_velocity: np.ndarray        # (3,) world, base-origin linear velocity
    com_jacobian_std: np.ndarray     # 3x18 CoM Jacobian in [v_base, w, qd] coords

    @property
    def M_u(self) -> np.ndarray:
        return self.M[:6]

    @property
    def M_a(self) -> np.ndarray:
        return self.M[6:]

    @property
    def h_u(self) -> np.ndarray:
        return self.h[:6]

    @property
    def h_j(self) -> np.ndarray:
        return self.h[6:]

    def stance_jacobian(self) -> np.ndarray:
        """Stacked stance-foot Jacobian, 3*c_st x 18."""
        idx = np.flatnonzero(self.stance_set)
        if idx.size == 0:
            return np.zeros((0, NV))
        return self.foot_jacobians[idx].reshape(-1, NV)

    def swing_jacobian(self) -> np.ndarray:
        idx = np.flatnonzero(~self.stance_set)
        if idx.size == 0:
            return np.zeros((0, NV))
        return self.foot_jacobians[idx].reshape(-1, NV)

    def stance_bias(self) -> np.ndarray:
        idx = np.flatnonzero(self.stance_set)
        return self.foot_bias_accels[idx].reshape(-1)

    def swing_bias(self) -> np.ndarray:
        idx = np.flatnonzero(~self.stance_set)
        return self.foot_bias_accels[idx].reshape(-1)


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------

def _leg_chain_base(model: RobotModel, q_leg: np.ndarray):
    """Rotation matrices and points of one leg, all in the base frame."""
    from .so3 import rot_x, rot_y

    l1, l2 = model.link_lengths
    a1 = rot_x(q_leg[0])
    a2 = a1 @ rot_y(q_leg[1])
    a3 = a2 @ rot_y(q_leg[2])
    knee = a2 @ (l1 * _ZAXIS_DOWN)
    foot = knee + a3 @ (l2 * _ZAXIS_DOWN)
    return a1, a2, a3, knee, foot


def forward_kinematics(model: RobotModel, q_j: np.ndarray, leg: int) -> np.ndarray:
    """Foot position of one leg in the base frame.

    ``q_j`` may be the full 12-vector or the 3-vector of that leg.
    """
    if leg not in range(NUM_LEGS):
        raise ValueError(f"unknown leg id {leg!r}")
    q_j = np.asarray(q_j, dtype=float).ravel()
    q_leg = q_j if q_j.size == 3 else q_j[3 * leg : 3 * leg + 3]
    _, _, _, _, foot = _leg_chain_base(model, q_leg)
    return model.hip_offsets[leg] + foot


def knee_position(model: RobotModel, q_j: np.ndarray, leg: int) -> np.ndarray:
    """Knee position of one leg in the base frame (used by the leg-collision
    criterion of the planner)."""
    if leg not in range(NUM_LEGS):
        raise ValueError(f"unknown leg id {leg!r}")
    q_j = np.asarray(q_j, dtype=float).ravel()
    q_leg = q_j if q_j.size == 3 else q_j[3 * leg : 3 * leg + 3]
    _, _, _, knee, _ = _leg_chain_base(model, q_leg)
    return model.hip_offsets[leg] + knee


def leg_jacobian_base(model: RobotModel, q_j: np.ndarray, leg: int) -> np.ndarray:
    """3x3 joint block of the foot Jacobian in the base frame."""
    if leg not in range(NUM_LEGS):
        raise ValueError(f"unknown leg id {leg!r}")
    q_j = np.asarray(q_j, dtype=float).ravel()
    q_leg = q_j if q_j.size == 3 else q_j[3 * leg : 3 * leg + 3]
    a1, a2, _, knee, foot = _leg_chain_base(model, q_leg)
    s1 = np.array([1.0, 0.0, 0.0])
    s2 = a1[:, 1]
    s3 = a2[:, 1]
    J = np.empty((3, 3))
    J[:, 0] = np.cross(s1, foot)
    J[:, 1] = np.cross(s2, foot)
    J[:, 2] = np.cross(s3, foot - knee)
    return J


def leg_ik(model: RobotModel, leg: int, foot_base: np.ndarray) -> np.ndarray:
    """Closed-form inverse kinematics, knee-backward configuration (KFE <= 0).

    The target is clamped to the reachable annulus; callers that care should
    check ``forward_kinematics`` of the result against the request.
    """
    if leg not in range(NUM_LEGS):
        raise ValueError(f"unknown leg id {leg!r}")
    d = np.asarray(foot_base, dtype=float).reshape(3) - model.hip_offsets[leg]
    l1, l2 = model.link_lengths
    # HAA aligns the leg plane: after rot_x(-q1), the y component must vanish.
    # Of the two solutions take the one with |q1| <= pi/2 (feet above the hip
    # plane otherwise flip the plane).
    q1 = np.arctan2(d[1], -d[2]) if (abs(d[1]) > 1e-12 or abs(d[2]) > 1e-12) else 0.0
    if q1 > np.pi / 2:
        q1 -= np.pi
    elif q1 < -np.pi / 2:
        q1 += np.pi
    c1, s1 = np.cos(q1), np.sin(q1)
    dx = d[0]
    dz = -s1 * d[1] + c1 * d[2]  # in-plane vertical component (negative down)
    rho = float(np.hypot(dx, dz))
    rho = float(np.clip(rho, abs(l1 - l2) + 1e-9, l1 + l2 - 1e-9))
    # positive HFE/KFE rotate the foot backward (-x), so the in-plane map is
    # (dx, dz) = -l1 (sin q2, cos q2) - l2 (sin(q2+q3), cos(q2+q3))
    cos_k = (rho**2 - l1**2 - l2**2) / (2.0 * l1 * l2)
    q3 = -float(np.arccos(np.clip(cos_k, -1.0, 1.0)))  # 0 when fully stretched
    phi = np.arctan2(-dx, -dz)
    cos_psi = (l1**2 + rho**2 - l2**2) / (2.0 * l1 * rho)
    psi = float(np.arccos(np.clip(cos_psi, -1.0, 1.0)))
    q2 = phi + psi
    if q2 > np.pi:
        q2 -= 2 * np.pi
    elif q2 < -np.pi:
        q2 += 2 * np.pi
    return np.array([q1, q2, q3])


def default_stand_q(model: RobotModel, height: float = 0.55) -> np.ndarray:
    """Joint vector with every foot directly below its hip at the given
    hip-to-foot distance."""
    q = np.zeros(NUM_JOINTS)
    for leg in range(NUM_LEGS):
        target = model.hip_offsets[leg] + np.array([0.0, 0.0, -height])
        q[3 * leg : 3 * leg + 3] = leg_ik(model, leg, target)
    return q


def balanced_stand_q(model: RobotModel, height: float = 0.55,
                     iterations: int = 6) -> np.ndarray:
    """Stand with the total CoM centered over the foot rectangle.

    The bent knees shift the CoM a few centimeters, so feet directly under
    the hips load front and hind legs unevenly; this solves for the common
    foot offset that re-centers the support."""
    offset = np.zeros(2)
    q = default_stand_q(model, height)
    for _ in range(iterations):
        q = np.zeros(NUM_JOINTS)
        for leg in range(NUM_LEGS):
            target = model.hip_offsets[leg] + np.array(
                [offset[0], offset[1], -height]
            )
            q[3 * leg : 3 * leg + 3] = leg_ik(model, leg, target)
        st = GeneralizedState(np.zeros(3), np.eye(3), np.zeros(6), q,
                              np.zeros(NUM_JOINTS))
        dyn = compute_dynamics(model, st, [True] * NUM_LEGS)
        feet_centroid = dyn.foot_positions_base[:, :2].mean(axis=0)
        offset += dyn.com_position[:2] - feet_centroid
    return q


# ---------------------------------------------------------------------------
# full dynamics
# ---------------------------------------------------------------------------

def compute_dynamics(
    model: RobotModel, state: GeneralizedState, stance_set
) -> DynamicsQuantities:
    """Inertia matrix, bias forces, foot kinematics and Jacobians.

    The work is split into a configuration pass (frames, points, Jacobians,
    the CoM map) and a velocity pass (body twists and bias accelerations at
    zero generalized acceleration). Bias accelerations are expressed in the
    CoM coordinates, i.e. they already contain the correction that makes
    a_com == 0 when the generalized accelerations are zero.

    A JIT-compiled twin of the core runs when numba is available; the numpy
    implementation below is the reference (see _dyncore).
    """
    state.validate()
    stance = np.asarray(stance_set, dtype=bool).reshape(NUM_LEGS)
    R = state.orientation
    xb = state.base_position

    from . import _dyncore

    if _dyncore.HAVE_NUMBA:
        (M, h, x_com, p_foot, v_foot, foot_jac, foot_bias, v_b, J_com_std) = (
            _dyncore.dynamics_core(
                np.ascontiguousarray(R),
                xb,
                state.twist,
                state.q_j,
                state.qd_j,
                model.hip_offsets,
                float(model.link_lengths[0]),
                float(model.link_lengths[1]),
                model.link_masses,
                float(model.trunk_mass),
                model.trunk_inertia,
                model._inertia_haa,
                model._inertia_upper,
                model._inertia_lower,
            )
        )
    else:
        (M, h, x_com, p_foot, v_foot, foot_jac, foot_bias, v_b, J_com_std) = (
            _dynamics_arrays_numpy(model, state)
        )

    w0 = state.twist[3:6]
    foot_base = (p_foot - xb) @ R
    vrel = v_foot - v_b - _cross(np.broadcast_to(w0, (NUM_LEGS, 3)), p_foot - xb)
    foot_vel_base = vrel @ R
    # physical leg Jacobians: strip the CoM-coordinate correction (the raw
    # joint columns are the corrected ones plus the CoM Jacobian's)
    jj = np.empty((NUM_LEGS, 3, 3))
    for i in range(NUM_LEGS):
        cols = slice(6 + 3 * i, 9 + 3 * i)
        jj[i] = foot_jac[i][:, cols] + J_com_std[:, cols]
    joint_jac_base = R.T @ jj

    return DynamicsQuantities(
        M=M,
        h=h,
        com_position=x_com,
        foot_positions=p_foot,
        foot_velocities=v_foot,
        foot_positions_base=foot_base,
        foot_velocities_base=foot_vel_base,
        foot_jacobians=foot_jac,
        foot_bias_accels=foot_bias,
        joint_jacobians_base=joint_jac_base,
        stance_set=stance,
        base_velocity=v_b,
        com_jacobian_std=J_com_std,
    )


def _dynamics_arrays_numpy(model: RobotModel, state: GeneralizedState):
    """Reference implementation of the dynamics core (see compute_dynamics)."""
    R = state.orientation
    xb = state.base_position
    q = state.q_j.reshape(NUM_LEGS, 3)
    qd = state.qd_j.reshape(NUM_LEGS, 3)
    l1, l2 = model.link_lengths
    m1, m2, m3 = model.link_masses
    m_tot = model.total_mass
    nb = 1 + 3 * NUM_LEGS  # trunk + 12 leg links

    # --- configuration pass (legs batched as leading axis 4) -----------------
    c = np.cos(q)
    s = np.sin(q)
    zeros = np.zeros(NUM_LEGS)
    ones = np.ones(NUM_LEGS)
    rx = np.stack(
        [ones, zeros, zeros, zeros, c[:, 0], -s[:, 0], zeros, s[:, 0], c[:, 0]],
        axis=-1,
    ).reshape(NUM_LEGS, 3, 3)
    ry2 = np.stack(
        [c[:, 1], zeros, s[:, 1], zeros, ones, zeros, -s[:, 1], zeros, c[:, 1]],
        axis=-1,
    ).reshape(NUM_LEGS, 3, 3)
    ry3 = np.stack(
        [c[:, 2], zeros, s[:, 2], zeros, ones, zeros, -s[:, 2], zeros, c[:, 2]],
        axis=-1,
    ).reshape(NUM_LEGS, 3, 3)
    A1 = R @ rx            # (4,3,3) batched matmul
    A2 = A1 @ ry2
    A3 = A2 @ ry3

    p_hip = xb + model.hip_offsets @ R.T                  # 4x3
    p_knee = p_hip - l1 * A2[:, :, 2]                     # links extend along local -z
    p_foot = p_knee - l2 * A3[:, :, 2]
    c_haa = p_hip                                          # HAA assembly CoM at the hip
    c_up = p_hip - 0.5 * l1 * A2[:, :, 2]
    c_lo = p_knee - 0.5 * l2 * A3[:, :, 2]

    s1 = np.broadcast_to(R[:, 0], (NUM_LEGS, 3))           # HAA axis, all legs
    s2 = A1[:, :, 1]
    s3 = A2[:, :, 1]

    x_com = (
        model.trunk_mass * xb
        + m1 * c_haa.sum(axis=0)
        + m2 * c_up.sum(axis=0)
        + m3 * c_lo.sum(axis=0)
    ) / m_tot

    # stacked body data: index 0 trunk, then legs x (HAA, upper, lower)
    coms = np.empty((nb, 3))
    coms[0] = xb
    coms[1::3] = c_haa
    coms[2::3] = c_up
    coms[3::3] = c_lo
    masses = np.empty(nb)
    masses[0] = model.trunk_mass
    masses[1::3] = m1
    masses[2::3] = m2
    masses[3::3] = m3

    # linear point Jacobians in std coords [v_b, w, qd]: J[:, :3] = I,
    # J[:, 3:6] = -skew(p - xb), joint columns filled per leg
    def fill_point_jacs(out: np.ndarray, pts: np.ndarray, level: int) -> None:
        """out: (4,3,18); pts: (4,3); columns for joints up to `level`."""
        rel = pts - xb
        out[:, 0, 4] = rel[:, 2]; out[:, 0, 5] = -rel[:, 1]
        out[:, 1, 3] = -rel[:, 2]; out[:, 1, 5] = rel[:, 0]
        out[:, 2, 3] = rel[:, 1]; out[:, 2, 4] = -rel[:, 0]
        out[:, 0, 0] = out[:, 1, 1] = out[:, 2, 2] = 1.0
        legs = np.arange(NUM_LEGS)
        col1 = _cross(s1, pts - p_hip)
        out[legs, :, 6 + 3 * legs] = col1
        if level >= 2:
            col2 = _cross(s2, pts - p_hip)
            out[legs, :, 7 + 3 * legs] = col2
        if level >= 3:
            col3 = _cross(s3, pts - p_knee)
            out[legs, :, 8 + 3 * legs] = col3

    Jv = np.zeros((nb, 3, NV))
    Jv[0, :, :3] = np.eye(3)
    fill_point_jacs(Jv[1::3], c_haa, 1)
    fill_point_jacs(Jv[2::3], c_up, 2)
    fill_point_jacs(Jv[3::3], c_lo, 3)

    Jw = np.zeros((nb, 3, NV))
    Jw[:, :, 3:6] = np.eye(3)
    legs = np.arange(NUM_LEGS)
    Jw[1 + 3 * legs, :, 6 + 3 * legs] = s1
    Jw[2 + 3 * legs, :, 6 + 3 * legs] = s1
    Jw[2 + 3 * legs, :, 7 + 3 * legs] = s2
    Jw[3 + 3 * legs, :, 6 + 3 * legs] = s1
    Jw[3 + 3 * legs, :, 7 + 3 * legs] = s2
    Jw[3 + 3 * legs, :, 8 + 3 * legs] = s3

    # world-frame rotational inertias
    Iw = np.empty((nb, 3, 3))
    Iw[0] = R @ model.trunk_inertia @ R.T
    Iw[1::3] = A1 @ model._inertia_haa @ np.swapaxes(A1, 1, 2)
    Iw[2::3] = A2 @ model._inertia_upper @ np.swapaxes(A2, 1, 2)
    Iw[3::3] = A3 @ model._inertia_lower @ np.swapaxes(A3, 1, 2)

    # CoM Jacobian (std) and the std -> CoM coordinate change. T^-1 only
    # touches the first three rows, and every point Jacobian has an identity
    # in its first three columns, so applying it is a couple of broadcast
    # updates rather than a matmul.
    J_com_std = (masses @ Jv.reshape(nb, 3 * NV)).reshape(3, NV) / m_tot
    r = x_com - xb
    sk_r = skew(r)
    dq_cols = -J_com_std[:, 6:]  # correction for columns 6:

    # --- velocity pass -------------------------------------------------------
    u_com = np.concatenate([state.twist, state.qd_j])
    w0 = u_com[3:6]
    v_b = u_com[:3] + sk_r @ w0 + dq_cols @ state.qd_j

    w0b = np.broadcast_to(w0, (NUM_LEGS, 3))
    w1 = w0b + qd[:, 0:1] * s1
    w2 = w1 + qd[:, 1:2] * s2
    w3 = w2 + qd[:, 2:3] * s3
    al1 = qd[:, 0:1] * _cross(w0b, s1)
    al2 = al1 + qd[:, 1:2] * _cross(w1, s2)
    al3 = al2 + qd[:, 2:3] * _cross(w2, s3)

    def point_motion(p, ref_p, v_ref, a_ref, w, al):
        rr = p - ref_p
        v = v_ref + _cross(w, rr)
        a = a_ref + _cross(al, rr) + _cross(w, _cross(w, rr))
        return v, a

    v_hip = v_b + _cross(w0b, p_hip - xb)
    a_hip = _cross(w0b, _cross(w0b, p_hip - xb))
    v_cup, a_cup = point_motion(c_up, p_hip, v_hip, a_hip, w2, al2)
    v_knee, a_knee = point_motion(p_knee, p_hip, v_hip, a_hip, w2, al2)
    v_clo, a_clo = point_motion(c_lo, p_knee, v_knee, a_knee, w3, al3)
    v_foot, a_foot = point_motion(p_foot, p_knee, v_knee, a_knee, w3, al3)

    body_acc = np.zeros((nb, 3))
    body_acc[1::3] = a_hip  # HAA CoM coincides with the hip point
    body_acc[2::3] = a_cup
    body_acc[3::3] = a_clo
    body_w = np.empty((nb, 3))
    body_w[0] = w0
    body_w[1::3] = w1
    body_w[2::3] = w2
    body_w[3::3] = w3
    body_al = np.zeros((nb, 3))
    body_al[1::3] = al1
    body_al[2::3] = al2
    body_al[3::3] = al3

    # CoM bias acceleration in std coordinates; subtracting it from every
    # body/point bias converts the biases to CoM coordinates
    b_com = masses @ body_acc / m_tot

    # --- assemble M and h ----------------------------------------------------
    # apply T^-1 in place: cols 3:6 += J[:, :3] @ skew(r); cols 6: += J[:, :3] @ dq_cols
    Jv_c = Jv.copy()
    Jv_c[:, :, 3:6] += Jv[:, :, :3] @ sk_r
    Jv_c[:, :, 6:] += Jv[:, :, :3] @ dq_cols

    Jflat = Jv_c.reshape(nb * 3, NV)
    Wflat = (Jv_c * masses[:, None, None]).reshape(nb * 3, NV)
    IJw = Iw @ Jw
    M = Jflat.T @ Wflat + Jw.reshape(nb * 3, NV).T @ IJw.reshape(nb * 3, NV)
    M = 0.5 * (M + M.T)

    f_body = masses[:, None] * (body_acc - b_com - G_VEC)
    tq_body = (Iw @ body_al[:, :, None])[:, :, 0] + _cross(
        body_w, (Iw @ body_w[:, :, None])[:, :, 0]
    )
    h = Jflat.T @ f_body.ravel() + Jw.reshape(nb * 3, NV).T @ tq_body.ravel()

    foot_jac = np.zeros((NUM_LEGS, 3, NV))
    fill_point_jacs(foot_jac, p_foot, 3)
    foot_jac[:, :, 3:6] += foot_jac[:, :, :3] @ sk_r
    foot_jac[:, :, 6:] += foot_jac[:, :, :3] @ dq_cols
    foot_bias = a_foot - b_com

    return (M, h, x_com, p_foot, v_foot, foot_jac, foot_bias, v_b, J_com_std)
