"""Proprioceptive state estimation.

Three layers, deliberately decoupled:

  * a globally convergent nonlinear attitude observer (gyro + reference
    vector pairs) with a projected gyro-bias law,
  * an optional Kalman refinement linearized about the observer's output
    (the observer is the exogenous linearization signal, so the filter
    inherits its stability),
  * leg odometry fused with the accelerometer in a linear time-varying
    Kalman filter over base position and velocity.

Attitude and navigation are decoupled on purpose: with the attitude supplied
externally the navigation dynamics is linear time-varying and the covariance
flow cannot diverge in finite time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dynamics import GRAVITY, NUM_LEGS, DynamicsQuantities
from .so3 import exp_so3, project_to_so3, skew, vex

G_N = np.array([0.0, 0.0, GRAVITY])  # accelerometer reaction direction, world


@dataclass
class ImuSample:
    specific_force: np.ndarray   # (3,) body frame
    angular_velocity: np.ndarray # (3,) body frame
    t: float = 0.0

    def __post_init__(self) -> None:
        self.specific_force = np.asarray(self.specific_force, float).reshape(3)
        self.angular_velocity = np.asarray(self.angular_velocity, float).reshape(3)
        if not (
            np.all(np.isfinite(self.specific_force))
            and np.all(np.isfinite(self.angular_velocity))
        ):
            raise ValueError("non-finite IMU sample")


@dataclass
class NloGains:
    K_p: np.ndarray = field(default_factory=lambda: 5.0 * np.eye(3))
    k_bias: float = 0.6
    sigma: float = 1.0
    bias_bound: float = 0.1     # known upper bound on the gyro bias norm

    def __post_init__(self) -> None:
        self.K_p = np.asarray(self.K_p, float).reshape(3, 3)
        if (
            np.any(np.linalg.eigvalsh(0.5 * (self.K_p + self.K_p.T)) <= 0)
            or self.k_bias <= 0
            or self.sigma < 1.0
            or self.bias_bound <= 0
        ):
            raise ValueError("observer gains must be positive (sigma >= 1)")


@dataclass
class AttitudeEstimate:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))  # body->world
    bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # Kalman-refinement internals (world-side rotation-error state)
    xi: np.ndarray = field(default_factory=lambda: np.zeros(3))
    P_xi: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(3))

    @property
    def rotation_refined(self) -> np.ndarray:
        return exp_so3(self.xi) @ self.rotation


def nlo_step(
    est: AttitudeEstimate,
    imu: ImuSample,
    vector_pairs: list[tuple[np.ndarray, np.ndarray]],
    gains: NloGains,
    dt: float,
) -> AttitudeEstimate:
    """One forward-Euler step of the attitude observer.

    vector_pairs holds (y_world, y_body) reference/measurement pairs; at
    least one is required, two non-collinear ones give convergence from any
    initial attitude, a single one needs a persistently exciting trajectory.
    """
    if not vector_pairs:
        raise ValueError("need at least one vector pair")
    R = est.rotation
    Js = np.zeros((3, 3))
    for y_n, y_b in vector_pairs:
        y_n = np.asarray(y_n, float).reshape(3)
        y_b = np.asarray(y_b, float).reshape(3)
        ny_n, ny_b = np.linalg.norm(y_n), np.linalg.norm(y_b)
        if ny_n < 1e-9 or ny_b < 1e-9:
            raise ValueError("zero-norm measurement vector")
        y_n, y_b = y_n / ny_n, y_b / ny_b
        Js += np.outer(y_n - R @ y_b, y_b)

    R_dot = R @ skew(imu.angular_velocity - est.bias) + gains.sigma * gains.K_p @ Js
    # bias law: skew part of the saturated-attitude-weighted injection. (The
    # symmetric part has zero vex and carries no information.)
    Rs = np.clip(R, -1.0, 1.0)
    inner = Rs.T @ (gains.K_p @ Js)
    b_dot = -gains.k_bias * vex(0.5 * (inner - inner.T))

    R_new = project_to_so3(R + dt * R_dot)
    b_new = est.bias + dt * b_dot
    nb = np.linalg.norm(b_new)
    if nb > gains.bias_bound:  # parameter projection
        b_new *= gains.bias_bound / nb
    est.rotation = R_new
    est.bias = b_new
    return est


def xkf_step(
    x_hat: np.ndarray,
    P: np.ndarray,
    x_nlo: np.ndarray,
    u: np.ndarray | None,
    z: np.ndarray | None,
    f_x,
    h_x,
    C: np.ndarray,
    H: np.ndarray,
    Q: np.ndarray,
    R_noise: np.ndarray,
    dt: float,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Generic Kalman step linearized about the exogenous signal x_nlo.

        xdot = f(x_nlo, u) + C (x - x_nlo) + K (z - h(x_nlo) - H (x - x_nlo))
        Pdot = C P + P C^T - K H P + Q,   K = P H^T R^-1

    Euler-discretized at dt; returns (x, P, repaired) where `repaired` flags
    a covariance that had to be symmetrized/floored.
    """
    K = P @ H.T @ np.linalg.inv(R_noise)
    dx = f_x(x_nlo, u) + C @ (x_hat - x_nlo)
    if z is not None:
        dx = dx + K @ (z - h_x(x_nlo) - H @ (x_hat - x_nlo))
    x_new = x_hat + dt * dx
    P_new = P + dt * (C @ P + P @ C.T - K @ H @ P + Q)
    P_new = 0.5 * (P_new + P_new.T)
    repaired = False
    w = np.linalg.eigvalsh(P_new)
    if w[0] <= 0.0:
        v, U = np.linalg.eigh(P_new)
        P_new = U @ np.diag(np.maximum(v, 1e-12)) @ U.T
        repaired = True
    return x_new, P_new, repaired


class AttitudeObserver:
    """Nonlinear observer plus optional Kalman refinement of its output.

    The refinement estimates a world-side rotation error xi (R_true ~
    exp(S(xi)) R_nlo) as a random walk observed through the same vector
    measurements. Everything is linearized about the observer output, never
    about the refined state.
    """

    def __init__(
        self,
        gains: NloGains | None = None,
        use_refinement: bool = False,
        q_xi: float = 1e-4,
        r_meas: float = 1e-2,
    ):
        self.gains = gains or NloGains()
        self.est = AttitudeEstimate()
        self.use_refinement = use_refinement
        self.q_xi = q_xi
        self.r_meas = r_meas
        self.repair_events = 0

    def reset(self, rotation=None, bias=None) -> None:
        self.est = AttitudeEstimate()
        if rotation is not None:
            self.est.rotation = np.asarray(rotation, float).copy()
        if bias is not None:
            self.est.bias = np.asarray(bias, float).copy()

    def step(self, imu: ImuSample, vector_pairs, dt: float) -> AttitudeEstimate:
        nlo_step(self.est, imu, vector_pairs, self.gains, dt)
        if self.use_refinement and vector_pairs:
            R = self.est.rotation
            H = np.vstack([R.T @ skew(np.asarray(y_n, float) / np.linalg.norm(y_n))
                           for y_n, _ in vector_pairs])
            z = np.concatenate([
                np.asarray(y_b, float) / np.linalg.norm(y_b)
                - R.T @ (np.asarray(y_n, float) / np.linalg.norm(y_n))
                for y_n, y_b in vector_pairs
            ])
            m = z.size
            xi, P, rep = xkf_step(
                self.est.xi, self.est.P_xi, np.zeros(3), None, z,
                lambda x, u: np.zeros(3), lambda x: np.zeros(m),
                np.zeros((3, 3)), H,
                self.q_xi * np.eye(3), self.r_meas * np.eye(m), dt,
            )
            self.est.xi = xi
            self.est.P_xi = P
            self.repair_events += int(rep)
        return self.est


def leg_odometry(
    dyn: DynamicsQuantities,
    omega_body: np.ndarray,
    contact_flags,
) -> np.ndarray | None:
    """Base velocity in the body frame from stance-leg kinematics.

    Per stance leg the rigid-contact assumption gives

        xdot_l^b = -(J_l qd_l + w^b x x_l^b)

    and the contributions are averaged. Returns None when no leg is in
    contact (the fusion filter then skips its measurement update).
    """
    flags = np.asarray(contact_flags).astype(bool).reshape(NUM_LEGS)
    n_s = int(flags.sum())
    if n_s == 0:
        return None
    omega_body = np.asarray(omega_body, float).reshape(3)
    v = np.zeros(3)
    for leg in np.flatnonzero(flags):
        joint_vel = dyn.foot_velocities_base[leg]  # equals J_l qd_l
        v -= joint_vel + np.cross(omega_body, dyn.foot_positions_base[leg])
    return v / n_s


@dataclass
class NavEstimate:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    P: np.ndarray = field(default_factory=lambda: np.eye(6) * 0.01)
    repair_events: int = 0


def ltv_kf_step(
    nav: NavEstimate,
    rotation: np.ndarray,
    imu: ImuSample,
    lo_velocity_body: np.ndarray | None,
    Q: np.ndarray,
    R_noise: np.ndarray,
    dt: float,
) -> NavEstimate:
    """Constant-velocity propagate + world-frame velocity update.

    Input u = R f_s - g_n; measurement z = R xdot^b when leg odometry is
    available, otherwise the update is skipped.
    """
    R = np.asarray(rotation, float)
    u = R @ imu.specific_force - G_N
    Phi = np.eye(6)
    Phi[:3, 3:] = dt * np.eye(3)
    x = np.concatenate([nav.position, nav.velocity])
    x = Phi @ x
    x[:3] += 0.5 * dt * dt * u
    x[3:] += dt * u
    P = Phi @ nav.P @ Phi.T + Q * dt
    if lo_velocity_body is not None:
        z = R @ np.asarray(lo_velocity_body, float)
        H = np.zeros((3, 6))
        H[:, 3:] = np.eye(3)
        S = H @ P @ H.T + R_noise
        K = P @ H.T @ np.linalg.inv(S)
        x = x + K @ (z - H @ x)
        IKH = np.eye(6) - K @ H
        P = IKH @ P @ IKH.T + K @ R_noise @ K.T  # Joseph form
    P = 0.5 * (P + P.T)
    w = np.linalg.eigvalsh(P)
    if w[0] <= 0.0:
        v, U = np.linalg.eigh(P)
        P = U @ np.diag(np.maximum(v, 1e-15)) @ U.T
        nav.repair_events += 1
    nav.position = x[:3]
    nav.velocity = x[3:]
    nav.P = P
    return nav


# ---------------------------------------------------------------------------
# replayable sensor logs
# ---------------------------------------------------------------------------

SENSOR_LOG_FIELDS = (
    ["t"]
    + [f"f_s_{a}" for a in "xyz"]
    + [f"omega_{a}" for a in "xyz"]
    + [f"q_{i}" for i in range(12)]
    + [f"qd_{i}" for i in range(12)]
    + [f"tau_{i}" for i in range(12)]
)


@dataclass
class SensorLog:
    """Recorded proprioceptive stream: t, f_s, omega, q, qd, tau per row."""

    t: np.ndarray
    f_s: np.ndarray     # (N,3)
    omega: np.ndarray   # (N,3)
    q: np.ndarray       # (N,12)
    qd: np.ndarray      # (N,12)
    tau: np.ndarray     # (N,12)

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(SENSOR_LOG_FIELDS)
            for i in range(self.t.size):
                wr.writerow(
                    [self.t[i], *self.f_s[i], *self.omega[i], *self.q[i],
                     *self.qd[i], *self.tau[i]]
                )

    @classmethod
    def load(cls, path) -> "SensorLog":
        data = np.genfromtxt(path, delimiter=",", skip_header=1)
        data = np.atleast_2d(data)
        return cls(
            t=data[:, 0],
            f_s=data[:, 1:4],
            omega=data[:, 4:7],
            q=data[:, 7:19],
            qd=data[:, 19:31],
            tau=data[:, 31:43],
        )
