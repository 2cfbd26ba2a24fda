"""Closed-loop locomotion controller.

Wires the gait schedule, swing trajectories, whole-body controller, load
ramping, the terrain-compliance estimator, and (optionally) the vision
planners into one per-tick callable. Three controller modes:

  swbc    rigid-contact whole-body control
  awbc    compliant-contact control with fixed terrain parameters
  stance  compliant-contact control fed by the online compliance estimator

Planner modes: none (terrain-following height), vpa (safe-foothold pose
optimization + foothold adaptation), tbr (plane-fit pose baseline + foothold
adaptation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dynamics import (
    GRAVITY,
    NUM_LEGS,
    GeneralizedState,
    RobotModel,
    compute_dynamics,
)
from ..so3 import rot_z, rpy_to_matrix
from ..terrain import (
    ComplianceEstimator,
    ContactSample,
    KelvinVoigtParams,
    estimate_grf,
    estimate_penetration,
)
from ..vital import (
    FecConfig,
    GaitParams,
    PoseCommand,
    fit_rbf,
    nsf,
    fec,
    pose_evaluation,
    pose_optimize_receding,
    tbr_baseline,
    vfa_select,
)
from ..wbc import TaskReferences, WbcConfig, WholeBodyController, loading_period
from .gait import GaitSchedule
from .swing import SwingTrajectory
from .world import TerrainWorld


@dataclass
class ControllerOptions:
    mode: str = "swbc"                     # swbc | awbc | stance
    planner: str = "none"                  # none | vpa | tbr
    height: float = 0.55                   # body height above local terrain
    awbc_stiffness: float = 8000.0         # fixed parameters for awbc mode
    awbc_damping: float = 400.0
    tce_initial_stiffness: float = 1.0e5
    tce_window: int = 250
    contact_force_threshold: float = 20.0
    raibert_gain: float = 0.03
    crawl_sway: float = 0.7                # CoM shift toward the support
    sway_tau: float = 0.2                  # triangle during crawl swings (s)
    planner_period: float = 0.25           # s between planner updates
    planner_horizons: int = 2
    planner_cost: str = "int"
    planner_margin: float = 0.025
    planner_rate: np.ndarray = field(
        default_factory=lambda: np.array([0.03, 0.05, 0.05])
    )
    planner_overlap: float | None = None   # horizon displacement; default
    pose_smoothness: float = 1.0           # half heightmap diagonal
    f_min: float = 5.0
    f_max: float = 700.0
    mu: float = 0.7
    control_dt: float = 0.004
    qp_tolerance: float = 1e-8

    def __post_init__(self) -> None:
        if self.mode not in ("swbc", "awbc", "stance"):
            raise ValueError(f"unknown controller mode {self.mode!r}")
        if self.planner not in ("none", "vpa", "tbr"):
            raise ValueError(f"unknown planner {self.planner!r}")


@dataclass
class TickLog:
    t: float
    wrench_desired: np.ndarray
    forces_opt: np.ndarray
    forces_actual: np.ndarray
    torques: np.ndarray
    slack_norm: float
    eps: np.ndarray
    kkt: tuple
    status: str
    stance: np.ndarray
    k_hat: np.ndarray


class LocomotionController:
    def __init__(
        self,
        model: RobotModel,
        world: TerrainWorld,
        schedule: GaitSchedule,
        options: ControllerOptions | None = None,
        command=None,                       # callable t -> (vx, vy, wz)
    ):
        self.model = model
        self.world = world
        self.schedule = schedule
        self.opt = options or ControllerOptions()
        self.command = command or (lambda t: np.zeros(3))

        cfg = WbcConfig(
            mode="rigid" if self.opt.mode == "swbc" else "compliant",
            mu=self.opt.mu,
            f_min=self.opt.f_min,
            f_max=self.opt.f_max,
            dt=self.opt.control_dt,
            qp_tolerance=self.opt.qp_tolerance,
        )
        self.wbc = WholeBodyController(model, cfg)
        self.tce = ComplianceEstimator(
            window=self.opt.tce_window,
        ) if self.opt.mode == "stance" else None
        k0 = {
            "swbc": 2.0e6,
            "awbc": self.opt.awbc_stiffness,
            "stance": self.opt.tce_initial_stiffness,
        }[self.opt.mode]
        d0 = self.opt.awbc_damping if self.opt.mode != "swbc" else 400.0
        self.terrain_params = KelvinVoigtParams.uniform(k0, d0)
        self.wbc.set_terrain(self.terrain_params)

        # desired-trajectory integrators
        self.x_d: np.ndarray | None = None
        self.yaw_d = 0.0
        self.pose_cmd: PoseCommand | None = None
        self._pose_rp = np.zeros(2)

        self.prev_flags = np.ones(NUM_LEGS, dtype=bool)
        self._sway = np.zeros(2)
        self.swings: list[SwingTrajectory | None] = [None] * NUM_LEGS
        self.anchors = np.zeros((NUM_LEGS, 3))
        self.t_touchdown = np.zeros(NUM_LEGS)
        self._prev_qd: np.ndarray | None = None
        self._prev_tau = np.zeros(12)
        self.solver_failures = 0
        self.logs: list[TickLog] = []
        self.nsf_trace: list[tuple] = []    # (t, x, nsf at commanded pose)
        self._planner_t = -np.inf
        self._fec_cfg = FecConfig(
            l1=float(model.link_lengths[0]), l2=float(model.link_lengths[1]),
            step_height=schedule.step_height,
            path_samples=7, lc_sweep_phases=3, lc_samples_per_link=5,
        )

    # ------------------------------------------------------------------
    def start(self, sim) -> None:
        """Latch references and anchors from the initial simulator state."""
        dyn = compute_dynamics(self.model, sim.state, sim.contact_active)
        self.x_d = dyn.com_position.copy()
        terr = float(self.world.height(*dyn.com_position[:2]))
        self.x_d[2] = terr + self.opt.height - (
            sim.state.base_position[2] - dyn.com_position[2]
        )
        self.anchors = dyn.foot_positions.copy()
        for leg in range(NUM_LEGS):
            self.anchors[leg, 2] = float(
                self.world.height(*dyn.foot_positions[leg, :2])
            )
        if self.opt.mode != "swbc":
            self.wbc.seed_static_equilibrium()
        self.pose_cmd = PoseCommand(self.opt.height, 0.0, 0.0)

    def _stiffness_in_use(self, leg: int) -> float:
        return float(self.terrain_params.stiffness[leg, 2])

    def _load_scale(self, t: float, flags) -> np.ndarray:
        scale = np.ones(NUM_LEGS)
        if self.schedule.gait == "stand":
            return scale
        floor = 0.03
        for leg in range(NUM_LEGS):
            if not flags[leg]:
                continue
            T_l = loading_period(
                self._stiffness_in_use(leg), self.model.total_mass,
                max(int(np.sum(flags)), 1),
            )
            up = (t - self.t_touchdown[leg]) / max(T_l, 1e-6)
            down = self.schedule.time_to_liftoff(t, leg) / max(T_l, 1e-6)
            scale[leg] = float(np.clip(min(up, down), floor, 1.0))
        return scale

    def _nominal_foothold(self, leg: int, t: float, dyn) -> np.ndarray:
        """Raibert-style touchdown target on the (undeformed) terrain."""
        v_cmd = rot_z(self.yaw_d) @ np.array([*self.command(t)[:2], 0.0])
        hip_b = self.model.hip_offsets[leg]
        st_pos = self._state.base_position + self._state.orientation @ hip_b
        t_td = self.schedule.time_to_touchdown(t, leg)
        xy = (
            st_pos[:2]
            + self._state.v_com[:2] * t_td
            + v_cmd[:2] * 0.5 * self.schedule.stance_duration
            + self.opt.raibert_gain * (self._state.v_com[:2] - v_cmd[:2])
        )
        return np.array([xy[0], xy[1], float(self.world.height(xy[0], xy[1]))])

    # ------------------------------------------------------------------
    def tick(self, sim, t: float) -> np.ndarray:
        self._state = sim.state
        flags = self.schedule.stance_flags(t)
        dyn = compute_dynamics(self.model, sim.state, flags)

        # gait transitions
        for leg in range(NUM_LEGS):
            if self.prev_flags[leg] and not flags[leg]:          # lift-off
                target = self._nominal_foothold(leg, t, dyn)
                self.swings[leg] = SwingTrajectory(
                    dyn.foot_positions[leg].copy(), target,
                    self.schedule.step_height, self.schedule.swing_duration,
                )
                if self.opt.planner in ("vpa", "tbr"):
                    self._adjust_foothold(leg, dyn)
            elif not self.prev_flags[leg] and flags[leg]:        # touchdown
                p = dyn.foot_positions[leg]
                if sim.contact_active[leg]:
                    self.anchors[leg] = sim.anchors[leg].copy()
                else:
                    self.anchors[leg] = np.array(
                        [p[0], p[1], float(self.world.height(p[0], p[1]))]
                    )
                self.t_touchdown[leg] = t
                self.swings[leg] = None
                self.wbc.reset_eps(leg)
        self.prev_flags = flags.copy()

        # planner
        if (
            self.opt.planner != "none"
            and t - self._planner_t >= self.opt.planner_period
        ):
            self._planner_t = t
            self._run_planner(t, dyn)

        # references
        cmd = np.asarray(self.command(t), dtype=float)
        dt = self.opt.control_dt
        v_cmd_world = rot_z(self.yaw_d) @ np.array([cmd[0], cmd[1], 0.0])
        self.x_d = self.x_d + v_cmd_world * dt
        self.yaw_d += float(cmd[2]) * dt
        terr = float(self.world.height(self.x_d[0], self.x_d[1]))
        if self.pose_cmd is not None:
            z_d = terr + self.pose_cmd.z_b
            roll_d, pitch_d = self.pose_cmd.roll, self.pose_cmd.pitch
        else:
            z_d = terr + self.opt.height
            roll_d = pitch_d = 0.0
        # the pose height commands the BASE; the wbc tracks the CoM, so shift
        # by the current base-to-CoM offset
        self.x_d[2] = z_d - (sim.state.base_position[2] - dyn.com_position[2])
        # static-crawl body sway: lean the CoM into the support triangle of
        # the three stance legs while one leg swings
        sway_target = np.zeros(2)
        if self.schedule.gait == "crawl" and np.sum(flags) == 3:
            centroid = self.anchors[flags, :2].mean(axis=0)
            sway_target = self.opt.crawl_sway * (centroid - self.x_d[:2])
        alpha = dt / max(self.opt.sway_tau, dt)
        self._sway += alpha * (sway_target - self._sway)
        com_target = self.x_d.copy()
        com_target[:2] += self._sway
        refs = TaskReferences(
            com_position_d=com_target,
            orientation_d=rpy_to_matrix(roll_d, pitch_d, self.yaw_d),
            twist_d=np.concatenate([v_cmd_world, [0.0, 0.0, cmd[2]]]),
            accel_d=np.zeros(6),
            swing_pos_d=np.zeros((4, 3)),
            swing_vel_d=np.zeros((4, 3)),
            swing_acc_d=np.zeros((4, 3)),
            stance_anchors=self.anchors,
        )
        s_prog = self.schedule.swing_progress(t)
        for leg in range(NUM_LEGS):
            if not flags[leg] and self.swings[leg] is not None:
                pos, vel, acc = self.swings[leg].sample(float(s_prog[leg]))
                refs.swing_pos_d[leg] = pos
                refs.swing_vel_d[leg] = vel
                refs.swing_acc_d[leg] = acc

        # per-foot terrain normals from the world
        normals = np.stack([
            self.world.normal(*dyn.foot_positions[leg, :2]) for leg in range(4)
        ])

        sol = self.wbc.solve_tick(
            sim.state, dyn, refs, normals=normals,
            f_max_scale=self._load_scale(t, flags),
        )
        if sol.status != "optimal":
            self.solver_failures += 1
            tau = self._prev_tau
        else:
            tau = sol.torques
        # compliance estimation runs on measured quantities of the last tick
        if self.tce is not None:
            self._tce_update(t, sim, dyn, flags)
        self._prev_tau = tau
        self._prev_qd = sim.state.qd_j.copy()

        self.logs.append(TickLog(
            t=t, wrench_desired=sol.wrench_desired, forces_opt=sol.forces,
            forces_actual=sim.last_forces.copy(), torques=tau,
            slack_norm=float(np.linalg.norm(sol.slacks)), eps=sol.eps,
            kkt=sol.qp.kkt_residuals, status=sol.status,
            stance=flags.copy(),
            k_hat=self.terrain_params.stiffness[:, 2].copy(),
        ))
        return tau

    # ------------------------------------------------------------------
    def _tce_update(self, t, sim, dyn, flags) -> None:
        dt = self.opt.control_dt
        qdd = np.zeros(18)
        if self._prev_qd is not None:
            qdd[6:] = (sim.state.qd_j - self._prev_qd) / dt
        for leg in range(NUM_LEGS):
            if not (flags[leg] and sim.contact_active[leg]):
                continue
            f = estimate_grf(dyn, self._prev_tau, leg, qdd=qdd)
            if f is None:
                continue
            n = self.world.normal(*dyn.foot_positions[leg, :2])
            alpha = int(n @ f >= self.opt.contact_force_threshold)
            if not alpha:
                continue
            p, pd = estimate_penetration(
                self.model, sim.state.base_position, sim.state.orientation,
                dyn.base_velocity, sim.state.omega, sim.state.q_j,
                sim.state.qd_j, sim.anchors[leg], leg,
            )
            sample = ContactSample(
                t=t, leg=leg, alpha=1, grf_world=f, penetration_world=p,
                rate_world=pd, touchdown_world=sim.anchors[leg].copy(),
            )
            est = self.tce.step(sample)
            if est.valid[leg, 2]:
                k = float(np.clip(est.stiffness[leg, 2], 500.0, 5.0e6))
                self.terrain_params.stiffness[leg, :] = k
                self.terrain_params.damping[leg, :] = self.opt.awbc_damping
        self.wbc.set_terrain(self.terrain_params)

    # ------------------------------------------------------------------
    def _leg_heightmaps(self, dyn, displacement=0.0):
        """Hip-projection heightmaps (datum-shifted) for all legs."""
        datum = float(self.world.height(*self._state.base_position[:2]))
        v = rot_z(self.yaw_d) @ np.array([*self.command(self._planner_t)[:2], 0.0])
        vn = v[:2] / max(float(np.linalg.norm(v[:2])), 1e-9)
        maps = []
        for leg in range(NUM_LEGS):
            hip = self._state.base_position + self._state.orientation \
                @ self.model.hip_offsets[leg]
            center = hip[:2] + vn * displacement
            hm = self.world.extract_heightmap(center)
            hm.heights = hm.heights - datum
            maps.append(hm)
        return maps, datum

    def _gait_params(self, t) -> GaitParams:
        sched = self.schedule
        cmd = self.command(t)
        step_len = float(np.hypot(cmd[0], cmd[1])) * sched.stance_duration
        return GaitParams(
            step_length=max(step_len, 0.02),
            step_frequency=sched.step_frequency,
            duty_factor=sched.duty_factor,
            time_to_touchdown=0.5 * sched.swing_duration,
        )

    def _run_planner(self, t, dyn) -> None:
        gait = self._gait_params(t)
        twist = self._state.twist
        n_h = self.opt.planner_horizons if self.opt.planner == "vpa" else 1
        if self.opt.planner_overlap is None:
            diag = 33 * 0.02 * np.sqrt(2.0)
            overlap = 0.5 * diag
        else:
            overlap = self.opt.planner_overlap
        curve_sets = []
        datum = 0.0
        for j in range(n_h):
            maps, datum = self._leg_heightmaps(dyn, displacement=j * overlap)
            curves = []
            for hm in maps:
                samples = pose_evaluation(hm, twist, gait, self._fec_cfg)
                curves.append(fit_rbf(samples))
            curve_sets.append(curves)

        prev = self.pose_cmd or PoseCommand(self.opt.height, 0.0, 0.0)
        if self.opt.planner == "vpa":
            res = pose_optimize_receding(
                curve_sets, prev, self.model.hip_offsets,
                rate_bounds=(-self.opt.planner_rate, self.opt.planner_rate),
                kind=self.opt.planner_cost, margin=self.opt.planner_margin,
                smoothness_weight=self.opt.pose_smoothness,
            )
            self.pose_cmd = res.pose
        else:  # tbr
            feet = []
            for leg in range(NUM_LEGS):
                target = (
                    self.swings[leg].target if self.swings[leg] is not None
                    else self.anchors[leg]
                )
                feet.append(target)
            pose, ok = tbr_baseline(np.asarray(feet), self.opt.height)
            if ok:
                # convert the absolute plane height to the local datum frame
                z_rel = float(np.clip(pose.z_b - datum, 0.2, 0.8))
                lim = 0.35
                self.pose_cmd = PoseCommand(
                    z_rel, float(np.clip(pose.roll, -lim, lim)),
                    float(np.clip(pose.pitch, -lim, lim)),
                )
        # score the commanded pose on the current curves (first horizon)
        zs = [
            self.pose_cmd.z_b
            - off[0] * np.sin(self.pose_cmd.pitch)
            + off[1] * np.cos(self.pose_cmd.pitch) * np.sin(self.pose_cmd.roll)
            for off in self.model.hip_offsets
        ]
        total = float(sum(max(float(c(z)), 0.0)
                          for c, z in zip(curve_sets[0], zs)))
        self.nsf_trace.append(
            (t, float(self._state.base_position[0]), total,
             self.pose_cmd.z_b, self.pose_cmd.roll, self.pose_cmd.pitch)
        )

    def _adjust_foothold(self, leg, dyn) -> None:
        """Foothold adaptation: pick the safe cell closest to the nominal."""
        traj = self.swings[leg]
        if traj is None:
            return
        datum = float(self.world.height(*self._state.base_position[:2]))
        nominal = traj.target
        hm = self.world.extract_heightmap(nominal[:2])
        hm.heights = hm.heights - datum
        hip = self._state.base_position + self._state.orientation \
            @ self.model.hip_offsets[leg]
        z_h = float(hip[2] - datum)
        mask = fec(hm, z_h, self._state.twist, self._gait_params(self._planner_t),
                   self._fec_cfg)
        pick = vfa_select(mask, hm, nominal[:2])
        if pick is None:
            return  # hold the nominal foothold and flag via nsf trace
        _, _, pos = pick
        new_target = np.array([pos[0], pos[1], pos[2] + datum])
        if np.linalg.norm(new_target - traj.target) > 1e-9:
            traj.retarget(0.0, new_target)
