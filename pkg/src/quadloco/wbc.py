"""Whole-body controller.

Builds the trunk/swing/stance tasks, assembles a dense QP over

    u = [qdd (18), F (3 per stance foot), eta (3 per swing foot),
         eps (3 per stance foot, compliant mode only)]

and maps the optimum to joint torques through the actuated dynamics. Two
stance modes:

  rigid      stance feet pinned: J_st qdd + Jdot qd = vdot_st_d (an anchor
             impedance keeps the relative distance among stance feet).
  compliant  the ground reaction force must match a Kelvin-Voigt impedance
             acting on a *desired* penetration eps that is itself a decision
             variable; eps rates come from backward differences of the
             controller's own eps history.

The cost tracks the desired CoM wrench through the contact-force map
(W_com = J_st_u^T F), regularizes the solution, and penalizes the swing
slacks that soften the swing-task rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    GRAVITY,
    NUM_JOINTS,
    NUM_LEGS,
    NV,
    DynamicsQuantities,
    GeneralizedState,
    RobotModel,
)
from .qpsolver import QpSolution, QuadraticProgram, solve
from .so3 import log_so3, skew
from .terrain import KelvinVoigtParams


@dataclass
class TaskReferences:
    """Planner outputs consumed by one controller tick."""

    com_position_d: np.ndarray               # (3,)
    orientation_d: np.ndarray                # (3,3)
    twist_d: np.ndarray                      # (6,) [v_com_d, omega_d]
    accel_d: np.ndarray                      # (6,) feed-forward CoM acceleration
    swing_pos_d: np.ndarray                  # (4,3) world, rows for swing legs
    swing_vel_d: np.ndarray                  # (4,3)
    swing_acc_d: np.ndarray                  # (4,3) feed-forward
    stance_anchors: np.ndarray               # (4,3) touchdown samples, world
    external_wrench: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self) -> None:
        self.com_position_d = np.asarray(self.com_position_d, float).reshape(3)
        self.orientation_d = np.asarray(self.orientation_d, float).reshape(3, 3)
        self.twist_d = np.asarray(self.twist_d, float).reshape(6)
        self.accel_d = np.asarray(self.accel_d, float).reshape(6)
        self.swing_pos_d = np.asarray(self.swing_pos_d, float).reshape(4, 3)
        self.swing_vel_d = np.asarray(self.swing_vel_d, float).reshape(4, 3)
        self.swing_acc_d = np.asarray(self.swing_acc_d, float).reshape(4, 3)
        self.stance_anchors = np.asarray(self.stance_anchors, float).reshape(4, 3)
        self.external_wrench = np.asarray(self.external_wrench, float).reshape(6)
        if not np.all(np.isfinite(self.external_wrench)):
            raise ValueError("external wrench must be finite")

    @classmethod
    def hold(cls, com_position, orientation=None) -> "TaskReferences":
        """Stand-still references at a given CoM position."""
        return cls(
            com_position_d=com_position,
            orientation_d=np.eye(3) if orientation is None else orientation,
            twist_d=np.zeros(6),
            accel_d=np.zeros(6),
            swing_pos_d=np.zeros((4, 3)),
            swing_vel_d=np.zeros((4, 3)),
            swing_acc_d=np.zeros((4, 3)),
            stance_anchors=np.zeros((4, 3)),
        )


def _spd(mat: np.ndarray, name: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if not np.allclose(mat, mat.T, atol=1e-9):
        raise ValueError(f"{name} must be symmetric")
    if np.any(np.linalg.eigvalsh(mat) <= 0.0):
        raise ValueError(f"{name} must be positive-definite")
    return mat


@dataclass
class ImpedanceGains:
    """Cartesian impedances of the trunk, swing, and stance tasks."""

    K_com: np.ndarray = field(
        default_factory=lambda: np.diag([2000.0] * 3 + [1000.0] * 3)
    )
    D_com: np.ndarray = field(
        default_factory=lambda: np.diag([400.0] * 3 + [200.0] * 3)
    )
    # stance-task gains are deliberately gentle: on compliant ground the
    # feet legitimately sink below their touchdown anchors, and a stiff
    # anchor servo would drive the rigid-mode QP infeasible
    K_sw: np.ndarray = field(default_factory=lambda: 2000.0 * np.eye(3))
    D_sw: np.ndarray = field(default_factory=lambda: 20.0 * np.eye(3))
    K_st: np.ndarray = field(default_factory=lambda: 100.0 * np.eye(3))
    D_st: np.ndarray = field(default_factory=lambda: 20.0 * np.eye(3))

    def __post_init__(self) -> None:
        self.K_com = _spd(self.K_com, "K_com")
        self.D_com = _spd(self.D_com, "D_com")
        self.K_sw = _spd(self.K_sw, "K_sw")
        self.D_sw = _spd(self.D_sw, "D_sw")
        self.K_st = _spd(self.K_st, "K_st")
        self.D_st = _spd(self.D_st, "D_st")


@dataclass
class WbcConfig:
    mode: str = "rigid"                      # "rigid" | "compliant"
    mu: float = 0.7
    f_min: float = 5.0
    f_max: float = 700.0
    Q: np.ndarray = field(default_factory=lambda: np.ones(6))   # wrench weights
    r_reg: float = 1e-6                      # uniform solution regularizer
    slack_penalty: float = 1e3               # alpha
    torque_reg: str = "uniform"              # "uniform" | "joint_weighted"
    R_tau: np.ndarray = field(default_factory=lambda: 1e-6 * np.ones(NUM_JOINTS))
    dt: float = 0.004
    horizon_mult: float = 10.0
    qp_tolerance: float = 1e-8
    qp_max_iterations: int = 60
    # hook for joint-angle-dependent torque limits; default uses the
    # constant model limits
    torque_limits_fn: object = None

    def __post_init__(self) -> None:
        self.Q = np.asarray(self.Q, dtype=float).reshape(6)
        self.R_tau = np.asarray(self.R_tau, dtype=float).reshape(NUM_JOINTS)
        if self.mode not in ("rigid", "compliant"):
            raise ValueError("mode must be 'rigid' or 'compliant'")
        if self.mu <= 0.0:
            raise ValueError("friction coefficient must be positive")
        if not (0.0 <= self.f_min < self.f_max):
            raise ValueError("need 0 <= F_min < F_max")
        if self.slack_penalty <= max(self.r_reg, self.R_tau.max()) * 100.0:
            raise ValueError("slack penalty must dominate the regularizers")


@dataclass
class WbcSolution:
    qdd: np.ndarray                  # (18,)
    forces: np.ndarray               # (4,3), zero rows for swing legs
    slacks: np.ndarray               # (n_sw*3,)
    eps: np.ndarray                  # (4,3), zero rows when rigid/swing
    eps_dot: np.ndarray              # (4,3)
    eps_ddot: np.ndarray             # (4,3)
    torques: np.ndarray              # (12,)
    status: str
    qp: QpSolution
    wrench_desired: np.ndarray       # (6,)


# ---------------------------------------------------------------------------
# task-space references
# ---------------------------------------------------------------------------

def trunk_wrench(
    refs: TaskReferences,
    state: GeneralizedState,
    dyn: DynamicsQuantities,
    gains: ImpedanceGains,
    total_mass: float,
) -> np.ndarray:
    """Desired CoM wrench: impedance + gravity + feed-forward - W_ext.

    The orientation error is the world-frame rotation log of R_d R^T.
    """
    if not np.any(dyn.stance_set):
        raise ValueError("trunk task needs a nonempty stance set")
    err = np.empty(6)
    err[:3] = refs.com_position_d - dyn.com_position
    err[3:] = log_so3(refs.orientation_d @ state.orientation.T)
    dv = refs.twist_d - state.twist
    gravity = np.zeros(6)
    gravity[2] = total_mass * GRAVITY
    M_com = dyn.M[:6, :6]
    return (
        gains.K_com @ err
        + gains.D_com @ dv
        + gravity
        + M_com @ refs.accel_d
        - refs.external_wrench
    )


def swing_accel_ref(
    refs: TaskReferences,
    dyn: DynamicsQuantities,
    gains: ImpedanceGains,
) -> np.ndarray:
    """Desired swing-foot accelerations (n_sw x 3), world frame."""
    idx = np.flatnonzero(~dyn.stance_set)
    if idx.size == 0:
        raise ValueError("swing task needs a nonempty swing set")
    out = np.empty((idx.size, 3))
    for k, leg in enumerate(idx):
        dx = refs.swing_pos_d[leg] - dyn.foot_positions[leg]
        dv = refs.swing_vel_d[leg] - dyn.foot_velocities[leg]
        out[k] = refs.swing_acc_d[leg] + gains.K_sw @ dx + gains.D_sw @ dv
    return out


def stance_reference_accel(
    anchors: np.ndarray,
    dyn: DynamicsQuantities,
    gains: ImpedanceGains,
) -> np.ndarray:
    """Anchor-holding stance accelerations (n_st x 3): zero at the anchors."""
    idx = np.flatnonzero(dyn.stance_set)
    out = np.empty((idx.size, 3))
    for k, leg in enumerate(idx):
        out[k] = (
            gains.K_st @ (anchors[leg] - dyn.foot_positions[leg])
            - gains.D_st @ dyn.foot_velocities[leg]
        )
    return out


def end_stop_accel(q_lim, q, qd, horizon: float):
    """The end-stop deceleration expression -(2/dt^2)(q_lim - q - dt*qd).

    This is the printed form of the bound; accel_bounds flips its sign to
    orient it as a usable acceleration limit (see accel_bounds).
    """
    return -(2.0 / horizon**2) * (np.asarray(q_lim, float) - np.asarray(q, float)
                                  - horizon * np.asarray(qd, float))


def accel_bounds(
    q_j: np.ndarray,
    qd_j: np.ndarray,
    q_min: np.ndarray,
    q_max: np.ndarray,
    dt: float,
    horizon_mult: float = 10.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint acceleration bounds that reach the end-stop at zero velocity
    over the horizon dt*horizon_mult.

    Oriented so lower <= upper always holds: the bound toward a limit is
    (2/T^2)(q_lim - q - T qd), which closes to zero at the end-stop and goes
    negative (forces retreat) beyond a violated limit.
    """
    horizon = dt * horizon_mult
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    lo = -end_stop_accel(q_min, q_j, qd_j, horizon)
    hi = -end_stop_accel(q_max, q_j, qd_j, horizon)
    return lo, hi


def friction_rows(surface_normal: np.ndarray, mu: float):
    """Square-pyramid cone rows for one foot.

    Returns (rows, lo, hi): 4 tangential rows bounded one-sidedly plus the
    normal-selection row last (its bounds are filled by the caller with
    [F_min, F_max]). The tangent basis is the canonical frame rotated onto
    the surface normal, so tilting the surface rotates the pyramid rigidly.
    """
    n = np.asarray(surface_normal, dtype=float).reshape(3)
    norm = np.linalg.norm(n)
    if norm < 1e-9:
        raise ValueError("zero surface normal")
    n = n / norm
    # minimal rotation taking z to n
    z = np.array([0.0, 0.0, 1.0])
    c = float(z @ n)
    if c < -1.0 + 1e-12:
        Rn = np.diag([1.0, -1.0, -1.0])
    else:
        v = np.cross(z, n)
        Rn = np.eye(3) + skew(v) + skew(v) @ skew(v) / (1.0 + c)
    t1, t2 = Rn[:, 0], Rn[:, 1]
    rows = np.vstack([
        t1 - mu * n,   # <= 0
        t1 + mu * n,   # >= 0
        t2 - mu * n,
        t2 + mu * n,
        n,             # in [F_min, F_max]
    ])
    lo = np.array([-np.inf, 0.0, -np.inf, 0.0, 0.0])
    hi = np.array([0.0, np.inf, 0.0, np.inf, np.inf])
    return rows, lo, hi


def loading_period(k_stiffness: float, total_mass: float, n_stance: int) -> float:
    """Settling time of the equivalent second-order loading dynamics."""
    if k_stiffness <= 0.0 or n_stance < 1:
        raise ValueError("need positive stiffness and at least one stance leg")
    m_e = total_mass / n_stance
    return 4.6 / np.sqrt(k_stiffness / m_e)


def map_torques(dyn: DynamicsQuantities, qdd: np.ndarray, forces: np.ndarray) -> np.ndarray:
    """tau = M_a qdd + h_j - J_st_j^T F (forces as (4,3), swing rows zero)."""
    tau = dyn.M_a @ qdd + dyn.h_j
    for leg in np.flatnonzero(dyn.stance_set):
        J_j = dyn.foot_jacobians[leg][:, 6:]
        tau -= J_j.T @ forces[leg]
    return tau


# ---------------------------------------------------------------------------
# QP assembly
# ---------------------------------------------------------------------------

@dataclass
class QpLayout:
    """Index bookkeeping of the decision vector."""

    n: int
    stance: np.ndarray
    swing: np.ndarray
    i_qdd: slice
    i_force: slice
    i_eta: slice
    i_eps: slice
    torque_row0: int      # first torque row in C (for multiplier inspection)


def assemble(
    state: GeneralizedState,
    dyn: DynamicsQuantities,
    refs: TaskReferences,
    gains: ImpedanceGains,
    config: WbcConfig,
    model: RobotModel,
    terrain: KelvinVoigtParams | None = None,
    eps_history: np.ndarray | None = None,
    normals: np.ndarray | None = None,
    f_max_scale: np.ndarray | None = None,
) -> tuple[QuadraticProgram, QpLayout, np.ndarray]:
    """Build the per-tick QP. Returns (qp, layout, W_com_d).

    eps_history holds the previous two desired penetrations per leg,
    shape (2,4,3) ordered [k-1, k-2]; required in compliant mode.
    """
    stance = np.flatnonzero(dyn.stance_set)
    swing = np.flatnonzero(~dyn.stance_set)
    n_st, n_sw = stance.size, swing.size
    if n_st == 0:
        raise ValueError("cannot assemble with an empty stance set")
    compliant = config.mode == "compliant"
    if compliant and eps_history is None:
        raise ValueError("compliant mode needs the eps history")
    if compliant and terrain is None:
        raise ValueError("compliant mode needs terrain parameters")
    if normals is None:
        normals = np.tile([0.0, 0.0, 1.0], (NUM_LEGS, 1))
    if f_max_scale is None:
        f_max_scale = np.ones(NUM_LEGS)

    nf = 3 * n_st
    ne = 3 * n_sw
    np_eps = nf if compliant else 0
    n = NV + nf + ne + np_eps
    i_qdd = slice(0, NV)
    i_force = slice(NV, NV + nf)
    i_eta = slice(NV + nf, NV + nf + ne)
    i_eps = slice(NV + nf + ne, n)

    J_st = dyn.stance_jacobian()
    J_st_u = J_st[:, :6]
    W_d = trunk_wrench(refs, state, dyn, gains, model.total_mass)

    # cost: |J_st_u^T F - W_d|^2_Q + regularizers + slack penalty
    H = np.zeros((n, n))
    g = np.zeros(n)
    H[i_force, i_force] = 2.0 * (J_st_u @ (config.Q[:, None] * J_st_u.T))
    g[i_force] = -2.0 * (J_st_u @ (config.Q * W_d))
    H[i_qdd, i_qdd] += 2.0 * config.r_reg * np.eye(NV)
    if config.torque_reg == "joint_weighted":
        # R_kk = J_st_j R_tau J_st_j^T regularizes the forces through the
        # torques they would command
        J_j = J_st[:, 6:]
        H[i_force, i_force] += 2.0 * (J_j @ (config.R_tau[:, None] * J_j.T))
    else:
        H[i_force, i_force] += 2.0 * config.r_reg * np.eye(nf)
    if ne:
        H[i_eta, i_eta] = 2.0 * config.slack_penalty * np.eye(ne)
    if np_eps:
        H[i_eps, i_eps] = 2.0 * config.r_reg * np.eye(np_eps)

    # equalities. The swing softening is written in residual form: the slack
    # variable IS the signed swing-task violation (tied by an equality row
    # and quadratically penalized), which is the same optimum as two-sided
    # slack rows with eta >= 0 but without their degenerate double-active
    # geometry that stalls interior-point solves.
    eq_rows = 6 + (nf if not compliant else 2 * nf) + ne
    A = np.zeros((eq_rows, n))
    b = np.zeros(eq_rows)
    A[:6, i_qdd] = dyn.M_u
    A[:6, i_force] = -J_st_u.T
    b[:6] = -dyn.h_u
    if ne:
        vdot_sw = swing_accel_ref(refs, dyn, gains).reshape(-1)
        r_sw = slice(eq_rows - ne, eq_rows)
        A[r_sw, i_qdd] = dyn.swing_jacobian()
        A[r_sw, i_eta] = -np.eye(ne)
        b[r_sw] = vdot_sw - dyn.swing_bias()

    if not compliant:
        vdot_st = stance_reference_accel(refs.stance_anchors, dyn, gains)
        A[6 : 6 + nf, i_qdd] = J_st
        b[6 : 6 + nf] = vdot_st.reshape(-1) - dyn.stance_bias()
    else:
        dt = config.dt
        eps_1 = eps_history[0][stance].reshape(-1)
        eps_2 = eps_history[1][stance].reshape(-1)
        K_blk = np.zeros((nf, nf))
        D_blk = np.zeros((nf, nf))
        for k, leg in enumerate(stance):
            K_blk[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = terrain.world_stiffness(leg)
            D_blk[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = terrain.world_damping(leg)
        # F = K eps + D (eps - eps_1)/dt
        r0 = slice(6, 6 + nf)
        A[r0, i_force] = np.eye(nf)
        A[r0, i_eps] = -(K_blk + D_blk / dt)
        b[r0] = -(D_blk @ eps_1) / dt
        # J qdd + Jdot qd = -(eps - 2 eps_1 + eps_2)/dt^2
        r1 = slice(6 + nf, 6 + 2 * nf)
        A[r1, i_qdd] = J_st
        A[r1, i_eps] = np.eye(nf) / dt**2
        b[r1] = -dyn.stance_bias() + (2.0 * eps_1 - eps_2) / dt**2

    # inequalities: friction/normal rows, torque rows
    rows_per_foot = 5
    n_fr = rows_per_foot * n_st
    n_tau = NUM_JOINTS
    C = np.zeros((n_fr + n_tau, n))
    d_lo = np.empty(C.shape[0])
    d_hi = np.empty(C.shape[0])

    for k, leg in enumerate(stance):
        rows, lo, hi = friction_rows(normals[leg], config.mu)
        r = slice(rows_per_foot * k, rows_per_foot * (k + 1))
        C[r, NV + 3 * k : NV + 3 * k + 3] = rows
        d_lo[r] = lo
        d_hi[r] = hi
        d_lo[rows_per_foot * k + 4] = config.f_min
        d_hi[rows_per_foot * k + 4] = config.f_max * float(f_max_scale[leg])

    torque_row0 = n_fr
    r_tau = slice(torque_row0, torque_row0 + n_tau)
    C[r_tau, i_qdd] = dyn.M_a
    for k, leg in enumerate(stance):
        J_j = dyn.foot_jacobians[leg][:, 6:]
        C[r_tau, NV + 3 * k : NV + 3 * k + 3] = -J_j.T
    if config.torque_limits_fn is not None:
        tau_lo, tau_hi = config.torque_limits_fn(state.q_j)
    else:
        tau_hi = model.tau_limit_full
        tau_lo = -tau_hi
    d_lo[r_tau] = tau_lo - dyn.h_j
    d_hi[r_tau] = tau_hi - dyn.h_j

    # variable bounds: joint acceleration limits, eta >= 0, eps >= 0
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    a_lo, a_hi = accel_bounds(
        state.q_j, state.qd_j, model.q_min_full, model.q_max_full,
        config.dt, config.horizon_mult,
    )
    lb[6:NV] = a_lo
    ub[6:NV] = a_hi
    if ne:
        lb[i_eta] = 0.0
    if np_eps:
        lb[i_eps] = 0.0

    # row equilibration: the compliant rows carry 1/dt and 1/dt^2 factors,
    # and without rescaling the solver's absolute KKT tolerance would be
    # unreachable on them
    sa = np.maximum(np.abs(A).max(axis=1), 1.0)
    A /= sa[:, None]
    b /= sa
    sc = np.maximum(np.abs(C).max(axis=1), 1.0)
    C /= sc[:, None]
    d_lo = d_lo / sc
    d_hi = d_hi / sc

    qp = QuadraticProgram(H, g, A, b, C, d_lo, d_hi, lb, ub)
    layout = QpLayout(
        n=n, stance=stance, swing=swing, i_qdd=i_qdd, i_force=i_force,
        i_eta=i_eta, i_eps=i_eps, torque_row0=torque_row0,
    )
    return qp, layout, W_d


class WholeBodyController:
    """Owns the eps history and warm start across control ticks."""

    def __init__(
        self,
        model: RobotModel,
        config: WbcConfig | None = None,
        gains: ImpedanceGains | None = None,
    ):
        self.model = model
        self.config = config or WbcConfig()
        self.gains = gains or ImpedanceGains()
        self.terrain = KelvinVoigtParams.uniform(2e6, 400.0)
        # [k-1, k-2] desired penetrations per leg
        self.eps_history = np.zeros((2, NUM_LEGS, 3))
        self._warm: np.ndarray | None = None
        self._warm_n = -1

    def set_terrain(self, terrain: KelvinVoigtParams) -> None:
        self.terrain = terrain

    def reset_eps(self, leg: int, eps0: np.ndarray | None = None) -> None:
        """Re-seed the eps history of one leg (touchdown or mode switch)."""
        val = np.zeros(3) if eps0 is None else np.asarray(eps0, float)
        self.eps_history[0, leg] = val
        self.eps_history[1, leg] = val

    def seed_static_equilibrium(self, n_stance: int = 4) -> None:
        """Initialize all eps histories at the static-balance penetration so
        the first compliant tick does not see an eps impulse."""
        m_e = self.model.total_mass / n_stance
        for leg in range(NUM_LEGS):
            k_n = self.terrain.stiffness[leg, 2]
            p = m_e * GRAVITY / k_n if k_n > 0 else 0.0
            n_world = self.terrain.rotations[leg][2]
            self.reset_eps(leg, p * n_world)

    def solve_tick(
        self,
        state: GeneralizedState,
        dyn: DynamicsQuantities,
        refs: TaskReferences,
        normals: np.ndarray | None = None,
        f_max_scale: np.ndarray | None = None,
    ) -> WbcSolution:
        qp, layout, W_d = assemble(
            state, dyn, refs, self.gains, self.config, self.model,
            terrain=self.terrain, eps_history=self.eps_history,
            normals=normals, f_max_scale=f_max_scale,
        )
        # cold starts prove more reliable than re-seeding from the previous
        # tick (a boundary-clipped seed can stall the interior point early)
        sol = solve(
            qp, tolerance=self.config.qp_tolerance,
            max_iterations=self.config.qp_max_iterations,
        )

        qdd = sol.x[layout.i_qdd]
        forces = np.zeros((NUM_LEGS, 3))
        forces[layout.stance] = sol.x[layout.i_force].reshape(-1, 3)
        eta = sol.x[layout.i_eta].copy()
        eps = np.zeros((NUM_LEGS, 3))
        eps_dot = np.zeros((NUM_LEGS, 3))
        eps_ddot = np.zeros((NUM_LEGS, 3))
        if self.config.mode == "compliant":
            dt = self.config.dt
            eps[layout.stance] = sol.x[layout.i_eps].reshape(-1, 3)
            for leg in layout.stance:
                eps_dot[leg] = (eps[leg] - self.eps_history[0, leg]) / dt
                eps_ddot[leg] = (
                    eps[leg] - 2.0 * self.eps_history[0, leg] + self.eps_history[1, leg]
                ) / dt**2
            if sol.status == "optimal":
                for leg in layout.stance:
                    self.eps_history[1, leg] = self.eps_history[0, leg]
                    self.eps_history[0, leg] = eps[leg]
        tau = map_torques(dyn, qdd, forces)
        return WbcSolution(
            qdd=qdd, forces=forces, slacks=eta, eps=eps, eps_dot=eps_dot,
            eps_ddot=eps_ddot, torques=tau, status=sol.status, qp=sol,
            wrench_desired=W_d,
        )
