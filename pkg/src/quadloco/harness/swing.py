"""Swing-foot trajectory generation with mid-swing retargeting.

The base path is a quintic-smoothstep chord from lift-off to target plus a
sine-squared vertical bump of the commanded step height. Retargeting adds a
smooth correction that starts at zero position/velocity at the switch phase,
so replanned footholds never produce a jump.
"""

from __future__ import annotations

import numpy as np


def _smoothstep5(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def _smoothstep5_d(x):
    x = np.clip(x, 0.0, 1.0)
    return 30.0 * x**2 * (1.0 - x) ** 2


def _smoothstep5_dd(x):
    x = np.clip(x, 0.0, 1.0)
    return 60.0 * x * (1.0 - 3.0 * x + 2.0 * x**2)


class SwingTrajectory:
    """One swing: owns the base polynomial and any retarget corrections."""

    def __init__(self, lift_off, target, step_height: float, duration: float):
        if duration <= 0.0:
            raise ValueError("duration must be positive")
        self.lift_off = np.asarray(lift_off, dtype=float).copy()
        self.target = np.asarray(target, dtype=float).copy()
        self.step_height = float(step_height)
        self.duration = float(duration)
        self._corrections: list[tuple[float, np.ndarray]] = []  # (s0, delta)

    def retarget(self, s0: float, new_target) -> None:
        """Redirect the remainder of the swing to a new target."""
        s0 = float(np.clip(s0, 0.0, 0.999))
        delta = np.asarray(new_target, dtype=float) - self.target
        self._corrections.append((s0, delta))
        self.target = np.asarray(new_target, dtype=float).copy()

    def sample(self, s: float):
        """Position, velocity, acceleration at normalized phase s."""
        s = float(np.clip(s, 0.0, 1.0))
        q = _smoothstep5(s)
        qd = _smoothstep5_d(s)
        qdd = _smoothstep5_dd(s)
        chord = self.lift_off + (self._base_target() - self.lift_off) * q
        vel = (self._base_target() - self.lift_off) * qd
        acc = (self._base_target() - self.lift_off) * qdd
        # vertical bump
        chord = chord.copy()
        chord[2] += self.step_height * np.sin(np.pi * s) ** 2
        vel = vel.copy()
        vel[2] += self.step_height * np.pi * np.sin(2.0 * np.pi * s)
        acc = acc.copy()
        acc[2] += self.step_height * 2.0 * np.pi**2 * np.cos(2.0 * np.pi * s)
        for s0, delta in self._corrections:
            if s <= s0:
                continue
            x = (s - s0) / (1.0 - s0)
            chord = chord + delta * _smoothstep5(x)
            vel = vel + delta * _smoothstep5_d(x) / (1.0 - s0)
            acc = acc + delta * _smoothstep5_dd(x) / (1.0 - s0) ** 2
        T = self.duration
        return chord, vel / T, acc / T**2

    def _base_target(self) -> np.ndarray:
        t = self.target.copy()
        for _, delta in self._corrections:
            t = t - delta
        return t


def swing_trajectory(lift_off, target, step_height: float, duration: float,
                     s: float):
    """Stateless sampling of a fresh swing (no retarget history)."""
    return SwingTrajectory(lift_off, target, step_height, duration).sample(s)
