"""Desk-scale forward simulator with Kelvin-Voigt ground contact.

Semi-implicit integration: accelerations from the full CoM-coordinate
dynamics at the current configuration, velocities updated first, positions
integrated with the new velocities. Ground forces are per-foot spring-damper
pulls toward a touchdown anchor, clipped to non-negative normal force with a
Coulomb-saturated tangential part (the anchor drags on slip, so tangential
springs cannot wind up).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..dynamics import NUM_LEGS, GeneralizedState, RobotModel, compute_dynamics
from ..so3 import exp_so3, project_to_so3, skew
from .world import TerrainWorld


class SimulationBlowup(RuntimeError):
    pass


@dataclass
class ContactEvent:
    t: float
    leg: int
    kind: str          # "touchdown" | "liftoff"
    anchor: np.ndarray


class Simulator:
    def __init__(
        self,
        model: RobotModel,
        world: TerrainWorld,
        state: GeneralizedState,
        dt: float = 1e-3,
        energy_limit: float = 3000.0,
        stop_stiffness: float = 3000.0,
        stop_damping: float = 5.0,
    ):
        if dt > 1e-3 + 1e-12:
            raise ValueError("simulation step must be at most 1 ms")
        self.model = model
        self.world = world
        self.state = state.copy()
        self.dt = float(dt)
        self.stop_stiffness = stop_stiffness
        self.stop_damping = stop_damping
        self.t = 0.0
        self.contact_active = np.zeros(NUM_LEGS, dtype=bool)
        self.anchors = np.zeros((NUM_LEGS, 3))
        self.energy_limit = energy_limit
        self._ke_window: deque = deque(maxlen=10)
        self._prev_vb = None
        self._last_accel_world = np.zeros(3)
        self.last_forces = np.zeros((NUM_LEGS, 3))
        self.last_dyn = None

    # ------------------------------------------------------------------
    def settle_contacts(self) -> None:
        """Initialize contacts for feet already at/below the surface."""
        dyn = compute_dynamics(self.model, self.state, self.contact_active)
        for leg in range(NUM_LEGS):
            p = dyn.foot_positions[leg]
            h_t = float(self.world.height(p[0], p[1]))
            if p[2] <= h_t + 1e-9:
                self.contact_active[leg] = True
                self.anchors[leg] = np.array([p[0], p[1], h_t])

    def step(self, torques: np.ndarray) -> list[ContactEvent]:
        """Advance one step under the given joint torques."""
        torques = np.asarray(torques, dtype=float).reshape(12)
        st = self.state
        dyn = compute_dynamics(self.model, st, self.contact_active)
        self.last_dyn = dyn
        events: list[ContactEvent] = []

        # touchdown detection on the undeformed surface; a foot that re-makes
        # contact while still below the nominal surface (released inside the
        # deformed pocket) anchors at its own height so the fresh contact
        # starts with zero stored deformation
        for leg in range(NUM_LEGS):
            p = dyn.foot_positions[leg]
            h_t = float(self.world.height(p[0], p[1]))
            if not self.contact_active[leg] and p[2] < h_t:
                self.contact_active[leg] = True
                self.anchors[leg] = np.array([p[0], p[1], min(h_t, p[2])])
                events.append(ContactEvent(self.t, leg, "touchdown",
                                           self.anchors[leg].copy()))

        # contact forces implicit in the end-of-step foot velocities: the
        # stiff-rate term dt*K acts as the numerical damping a constraint
        # solver would provide, so rigid presets stay stable at 1 kHz
        rhs0 = -dyn.h.copy()
        rhs0[6:] += torques + self._end_stop_torques()
        u = np.concatenate([st.twist, st.qd_j])
        dt = self.dt
        active = list(np.flatnonzero(self.contact_active))
        F = np.zeros((NUM_LEGS, 3))
        for _ in range(NUM_LEGS + 1):
            A = dyn.M.copy()
            b = dyn.M @ u + dt * rhs0
            for leg in active:
                k, d = self.world.impedance_at(float(self.anchors[leg, 0]))
                J = dyn.foot_jacobians[leg]
                pen = self.anchors[leg] - dyn.foot_positions[leg]
                A += dt * (d + dt * k) * (J.T @ J)
                b += dt * (J.T @ (k * pen))
            u_new = np.linalg.solve(A, b)
            F[:] = 0.0
            released = []
            for leg in active:
                k, d = self.world.impedance_at(float(self.anchors[leg, 0]))
                J = dyn.foot_jacobians[leg]
                pen = self.anchors[leg] - dyn.foot_positions[leg]
                v_new = J @ u_new
                f = k * pen - (d + dt * k) * v_new
                n = self.world.normal(float(self.anchors[leg, 0]),
                                      float(self.anchors[leg, 1]))
                f_n = float(f @ n)
                if f_n <= 0.0:
                    released.append(leg)
                    continue
                f_t = f - f_n * n
                ft_norm = float(np.linalg.norm(f_t))
                limit = self.world.mu * f_n
                if ft_norm > limit:
                    # saturate and drag the anchor so the spring matches
                    f_t *= limit / ft_norm
                    slip = (ft_norm - limit) / k
                    self.anchors[leg] -= slip * (f - f_n * n) / ft_norm
                F[leg] = f_n * n + f_t
            if not released:
                break
            for leg in released:
                active.remove(leg)
                self.contact_active[leg] = False
                events.append(ContactEvent(self.t, leg, "liftoff",
                                           self.anchors[leg].copy()))
        self.last_forces = F

        # base-origin velocity from the new generalized velocities
        r = dyn.com_position - st.base_position
        dq_cols = -dyn.com_jacobian_std[:, 6:]
        v_b = u_new[:3] + skew(r) @ u_new[3:6] + dq_cols @ u_new[6:]
        self._last_accel_world = (
            (v_b - self._prev_vb) / self.dt if self._prev_vb is not None
            else np.zeros(3)
        )
        self._prev_vb = v_b.copy()

        st.base_position = st.base_position + self.dt * v_b
        st.orientation = project_to_so3(
            exp_so3(u_new[3:6] * self.dt) @ st.orientation
        )
        st.q_j = st.q_j + self.dt * u_new[6:]
        st.qd_j = u_new[6:]
        st.twist = u_new[:6]
        self.t += self.dt

        ke = 0.5 * float(u_new @ dyn.M @ u_new)
        self._ke_window.append(ke)
        if (
            len(self._ke_window) == self._ke_window.maxlen
            and ke > self.energy_limit
            and ke > 2.0 * self._ke_window[0]
        ):
            raise SimulationBlowup(
                f"kinetic energy blew up: {self._ke_window[0]:.1f} -> {ke:.1f} J "
                f"within {self._ke_window.maxlen} steps at t={self.t:.3f}s"
            )
        return events

    # ------------------------------------------------------------------
    def _stop_violation(self) -> np.ndarray:
        """Signed joint-limit violation (0 inside the range)."""
        q = self.state.q_j
        lo = self.model.q_min_full
        hi = self.model.q_max_full
        return np.minimum(q - lo, 0.0) + np.maximum(q - hi, 0.0)

    def _end_stop_torques(self) -> np.ndarray:
        """Spring-damper end stops keep passive joints inside their range."""
        v = self._stop_violation()
        tau = -self.stop_stiffness * v
        tau -= np.where(v != 0.0, self.stop_damping * self.state.qd_j, 0.0)
        return tau

    def imu_sample(self):
        """Body-frame specific force and angular velocity (noise-free)."""
        R = self.state.orientation
        f_s = R.T @ (self._last_accel_world + np.array([0.0, 0.0, 9.81]))
        omega_b = R.T @ self.state.omega
        return f_s, omega_b

    def kinetic_energy(self) -> float:
        dyn = self.last_dyn or compute_dynamics(
            self.model, self.state, self.contact_active
        )
        u = np.concatenate([self.state.twist, self.state.qd_j])
        return 0.5 * float(u @ dyn.M @ u)

    def mechanical_energy(self) -> float:
        """Kinetic + gravitational + stored contact-spring energy."""
        dyn = compute_dynamics(self.model, self.state, self.contact_active)
        u = np.concatenate([self.state.twist, self.state.qd_j])
        ke = 0.5 * float(u @ dyn.M @ u)
        # potential: masses at their CoM heights
        pe = self.model.total_mass * 9.81 * float(dyn.com_position[2])
        se = 0.0
        for leg in range(NUM_LEGS):
            if self.contact_active[leg]:
                k, _ = self.world.impedance_at(float(self.anchors[leg, 0]))
                pen = self.anchors[leg] - dyn.foot_positions[leg]
                se += 0.5 * k * float(pen @ pen)
        v = self._stop_violation()
        se += 0.5 * self.stop_stiffness * float(v @ v)
        return ke + pe + se
