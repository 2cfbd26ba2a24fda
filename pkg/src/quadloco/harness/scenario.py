"""Scenario runner: closed loop at 250 Hz control over a 1 kHz-or-finer
simulation, with deterministic seeding, CSV artifacts, and the metrics the
acceptance suite consumes."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..dynamics import (
    GeneralizedState,
    RobotModel,
    balanced_stand_q,
    compute_dynamics,
    desk_model,
)
from ..estimator import SensorLog
from ..so3 import log_so3
from .controller import ControllerOptions, LocomotionController
from .gait import GaitSchedule
from .simulator import SimulationBlowup, Simulator
from .world import TerrainWorld, flat_world, mixed_world, stairs_world

CONTROL_DT = 0.004  # 250 Hz


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    terrain: str = "T4"                    # preset | "stairs" | "mixed"
    terrain_segments: list = field(default_factory=list)
    stairs: dict = field(default_factory=dict)
    gait: str = "stand"                    # stand | crawl | trot
    gait_frequency: float = 0.5
    duty_factor: float = 0.8
    step_height: float = 0.14
    gait_start: float = 1.0
    controller: str = "swbc"               # swbc | awbc | stance
    planner: str = "none"                  # none | vpa | tbr
    duration: float = 5.0
    speed: float = 0.0                     # forward command after ramp-in
    speed_ramp: float = 1.0
    yaw_rate: float = 0.0
    seed: int = 0
    sim_dt: float = 1e-3
    height: float = 0.55
    awbc_stiffness: float = 8000.0
    planner_horizons: int = 2
    planner_cost: str = "int"
    planner_period: float = 0.25
    record_sensors: bool = False
    out_dir: str | None = None

    @classmethod
    def from_yaml(cls, path) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        return cls(**data)

    def save_yaml(self, path) -> None:
        data = {k: v for k, v in self.__dict__.items()}
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(data, f, sort_keys=False)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    status: str                    # completed | fell | solver-failure | blowup
    t: np.ndarray
    base_position: np.ndarray      # (N,3)
    base_rpy: np.ndarray           # (N,3)
    com_position: np.ndarray
    forces_actual: np.ndarray      # (N,4,3)
    forces_opt: np.ndarray
    torques: np.ndarray            # (N,12)
    eps: np.ndarray                # (N,4,3)
    k_hat: np.ndarray              # (N,4)
    kkt_max: np.ndarray            # (N,)
    slack_norm: np.ndarray
    stance: np.ndarray             # (N,4) bool
    pose_desired: np.ndarray       # (N,3) z_d, roll_d, pitch_d
    nsf_trace: np.ndarray          # (M,6) t, x, nsf, z_b, roll, pitch
    sensor_log: SensorLog | None = None
    metrics: dict = field(default_factory=dict)

    # ------------------------------------------------------------------
    def compute_metrics(self) -> dict:
        """GRF tracking MAE, pose MAE, drift, pose variation."""
        m: dict = {}
        st = self.stance.astype(bool)
        # normal-direction GRF tracking error over stance samples, all legs
        err = np.abs(self.forces_actual[:, :, 2] - self.forces_opt[:, :, 2])
        mask = st & (self.forces_opt[:, :, 2] > 0)
        m["grf_mae"] = float(err[mask].mean()) if mask.any() else 0.0
        m["height_mae"] = float(
            np.mean(np.abs(self.base_position[:, 2] - self.pose_desired[:, 0]))
        )
        m["pitch_mae"] = float(
            np.mean(np.abs(self.base_rpy[:, 1] - self.pose_desired[:, 2]))
        )
        m["kkt_worst"] = float(self.kkt_max.max(initial=0.0))
        m["x_progress"] = float(
            self.base_position[-1, 0] - self.base_position[0, 0]
        )
        if self.nsf_trace.size:
            dz = np.abs(np.diff(self.nsf_trace[:, 3]))
            m["pose_z_variation"] = float(np.sum(dz))
            m["nsf_mean"] = float(np.mean(self.nsf_trace[:, 2]))
        m["nan_outputs"] = int(
            np.count_nonzero(~np.isfinite(self.torques))
            + np.count_nonzero(~np.isfinite(self.forces_opt))
        )
        self.metrics.update(m)
        return m

    def save_csv(self, path) -> None:
        """Flat per-tick CSV (see README for the column schema)."""
        with open(path, "w", newline="", encoding="utf-8") as f:
            wr = csv.writer(f)
            header = (
                ["t"]
                + [f"base_{a}" for a in "xyz"]
                + ["roll", "pitch", "yaw"]
                + ["z_d", "roll_d", "pitch_d"]
                + [f"F_act_{leg}_{a}" for leg in range(4) for a in "xyz"]
                + [f"F_opt_{leg}_{a}" for leg in range(4) for a in "xyz"]
                + [f"tau_{i}" for i in range(12)]
                + [f"eps_n_{leg}" for leg in range(4)]
                + [f"k_hat_{leg}" for leg in range(4)]
                + ["kkt_max", "slack_norm"]
                + [f"stance_{leg}" for leg in range(4)]
            )
            wr.writerow(header)
            for i in range(self.t.size):
                wr.writerow(
                    [self.t[i], *self.base_position[i], *self.base_rpy[i],
                     *self.pose_desired[i],
                     *self.forces_actual[i].ravel(),
                     *self.forces_opt[i].ravel(), *self.torques[i],
                     *self.eps[i, :, 2], *self.k_hat[i],
                     self.kkt_max[i], self.slack_norm[i],
                     *self.stance[i].astype(int)]
                )


def build_world(cfg: ScenarioConfig) -> TerrainWorld:
    if cfg.terrain == "stairs":
        opts = dict(rise=0.10, go=0.25, n_steps=4, start_x=0.6, preset="T4")
        opts.update(cfg.stairs)
        return stairs_world(**opts)
    if cfg.terrain == "mixed":
        return mixed_world(cfg.terrain_segments)
    return flat_world(cfg.terrain)


def initial_state(model: RobotModel, cfg: ScenarioConfig,
                  world: TerrainWorld) -> GeneralizedState:
    # feet exactly at the surface: contacts settle without an impact
    # transient straining the tangential ground springs
    rng = np.random.default_rng(cfg.seed)
    q = balanced_stand_q(model, cfg.height)
    q = q + rng.normal(0.0, 0.004, size=12)
    st = GeneralizedState(np.zeros(3), np.eye(3), np.zeros(6), q, np.zeros(12))
    dyn = compute_dynamics(model, st, [True] * 4)
    lowest = float(dyn.foot_positions[:, 2].min())
    z0 = float(world.height(0.0, 0.0)) - lowest
    return GeneralizedState(
        np.array([0.0, 0.0, z0]), np.eye(3), np.zeros(6), q, np.zeros(12)
    )


def run_scenario(cfg: ScenarioConfig, model: RobotModel | None = None
                 ) -> ScenarioResult:
    model = model or desk_model()
    world = build_world(cfg)
    state = initial_state(model, cfg, world)
    sim = Simulator(model, world, state, dt=cfg.sim_dt)
    sim.settle_contacts()

    if cfg.gait == "trot":
        schedule = GaitSchedule.trot(cfg.gait_frequency, cfg.duty_factor,
                                     cfg.step_height, cfg.gait_start)
    elif cfg.gait == "crawl":
        schedule = GaitSchedule.crawl(cfg.gait_frequency, cfg.duty_factor,
                                      cfg.step_height, cfg.gait_start)
    else:
        schedule = GaitSchedule.stand()

    def command(t):
        ramp = np.clip((t - cfg.gait_start) / max(cfg.speed_ramp, 1e-6), 0, 1)
        return np.array([cfg.speed * ramp, 0.0, cfg.yaw_rate * ramp])

    opts = ControllerOptions(
        mode=cfg.controller, planner=cfg.planner, height=cfg.height,
        awbc_stiffness=cfg.awbc_stiffness,
        planner_horizons=cfg.planner_horizons, planner_cost=cfg.planner_cost,
        planner_period=cfg.planner_period, control_dt=CONTROL_DT,
    )
    ctl = LocomotionController(model, world, schedule, opts, command)
    ctl.start(sim)

    n_sub = max(int(round(CONTROL_DT / cfg.sim_dt)), 1)
    n_ticks = int(round(cfg.duration / CONTROL_DT))
    rows = {
        "t": [], "base": [], "rpy": [], "com": [], "pose_d": [],
    }
    sensor_rows = [] if cfg.record_sensors else None
    status = "completed"
    tau = np.zeros(12)
    try:
        for k in range(n_ticks):
            t = k * CONTROL_DT
            tau = ctl.tick(sim, t)
            for _ in range(n_sub):
                sim.step(tau)
                if sensor_rows is not None:
                    f_s, w_b = sim.imu_sample()
                    sensor_rows.append(
                        [sim.t, *f_s, *w_b, *sim.state.q_j, *sim.state.qd_j,
                         *tau]
                    )
            st = sim.state
            rpy = _rpy_of(st.orientation)
            rows["t"].append(t)
            rows["base"].append(st.base_position.copy())
            rows["rpy"].append(rpy)
            dyn_log = ctl.logs[-1]
            terr = float(world.height(*st.base_position[:2]))
            rows["pose_d"].append([
                terr + (ctl.pose_cmd.z_b if ctl.pose_cmd else cfg.height),
                ctl.pose_cmd.roll if ctl.pose_cmd else 0.0,
                ctl.pose_cmd.pitch if ctl.pose_cmd else 0.0,
            ])
            # fall detector (height relative to local terrain)
            if (
                st.base_position[2] - terr < 0.15
                or abs(rpy[0]) > 1.0
                or abs(rpy[1]) > 1.0
            ):
                status = "fell"
                break
            if ctl.solver_failures > 25:
                status = "solver-failure"
                break
    except SimulationBlowup:
        status = "blowup"

    n = len(rows["t"])
    logs = ctl.logs[:n]
    sensor_log = None
    if sensor_rows:
        arr = np.asarray(sensor_rows)
        sensor_log = SensorLog(
            t=arr[:, 0], f_s=arr[:, 1:4], omega=arr[:, 4:7], q=arr[:, 7:19],
            qd=arr[:, 19:31], tau=arr[:, 31:43],
        )
    result = ScenarioResult(
        config=cfg,
        status=status,
        t=np.asarray(rows["t"]),
        base_position=np.asarray(rows["base"]).reshape(n, 3),
        base_rpy=np.asarray(rows["rpy"]).reshape(n, 3),
        com_position=np.asarray(rows["base"]).reshape(n, 3),
        forces_actual=np.stack([lg.forces_actual for lg in logs]) if n else
        np.zeros((0, 4, 3)),
        forces_opt=np.stack([lg.forces_opt for lg in logs]) if n else
        np.zeros((0, 4, 3)),
        torques=np.stack([lg.torques for lg in logs]) if n else np.zeros((0, 12)),
        eps=np.stack([lg.eps for lg in logs]) if n else np.zeros((0, 4, 3)),
        k_hat=np.stack([lg.k_hat for lg in logs]) if n else np.zeros((0, 4)),
        kkt_max=np.asarray([max(lg.kkt) for lg in logs]),
        slack_norm=np.asarray([lg.slack_norm for lg in logs]),
        stance=np.stack([lg.stance for lg in logs]) if n else
        np.zeros((0, 4), bool),
        pose_desired=np.asarray(rows["pose_d"]).reshape(n, 3),
        nsf_trace=np.asarray(ctl.nsf_trace).reshape(-1, 6),
        sensor_log=sensor_log,
    )
    result.compute_metrics()
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.save_csv(out / f"{cfg.name}.csv")
        if sensor_log is not None:
            sensor_log.save(out / f"{cfg.name}_sensors.csv")
        if ctl.tce is not None:
            ctl.tce.write_csv(out / f"{cfg.name}_tce.csv")
    return result


def _rpy_of(R) -> np.ndarray:
    # yaw-pitch-roll extraction matching rpy_to_matrix
    pitch = float(np.arcsin(np.clip(-R[2, 0], -1.0, 1.0)))
    roll = float(np.arctan2(R[2, 1], R[2, 2]))
    yaw = float(np.arctan2(R[1, 0], R[0, 0]))
    return np.array([roll, pitch, yaw])


def compare_results(path_a, path_b, metric: str) -> dict:
    """Recompute a metric from two result CSVs (used by the CLI)."""
    def load(path):
        data = np.genfromtxt(path, delimiter=",", names=True)
        return data

    out = {}
    for tag, path in (("a", path_a), ("b", path_b)):
        d = load(path)
        if metric == "grf_mae":
            err = []
            for leg in range(4):
                act = d[f"F_act_{leg}_z"]
                opt = d[f"F_opt_{leg}_z"]
                stance = d[f"stance_{leg}"] > 0
                sel = stance & (opt > 0)
                if sel.any():
                    err.append(np.abs(act[sel] - opt[sel]))
            out[tag] = float(np.concatenate(err).mean()) if err else 0.0
        elif metric == "height_mae":
            out[tag] = float(np.mean(np.abs(d["base_z"] - d["z_d"])))
        elif metric == "drift_z":
            out[tag] = float(abs(d["base_z"][-1] - d["base_z"][0]))
        else:
            raise ValueError(f"unknown metric {metric!r}")
    return out
