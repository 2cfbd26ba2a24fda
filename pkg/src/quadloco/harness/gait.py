"""Phase-based gait scheduling.

A leg's phase is frac(t * frequency + offset); it is in stance while the
phase is below the duty factor. The crawl sequence is LH, LF, RH, RF.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dynamics import NUM_LEGS

# leg order LF, RF, LH, RH
TROT_OFFSETS = np.array([0.0, 0.5, 0.5, 0.0])
CRAWL_OFFSETS = np.array([0.75, 0.25, 0.0, 0.5])


@dataclass
class GaitSchedule:
    gait: str = "stand"                 # "stand" | "crawl" | "trot"
    step_frequency: float = 1.0
    duty_factor: float = 0.5
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(NUM_LEGS))
    step_height: float = 0.14
    start_time: float = 0.0             # standing before this

    def __post_init__(self) -> None:
        self.offsets = np.asarray(self.offsets, dtype=float).reshape(NUM_LEGS)
        if self.gait not in ("stand", "crawl", "trot"):
            raise ValueError(f"unknown gait {self.gait!r}")
        if not (0.0 < self.duty_factor < 1.0):
            raise ValueError("duty factor must be in (0, 1)")
        if self.step_frequency <= 0.0:
            raise ValueError("step frequency must be positive")
        if np.any(self.offsets < 0.0) or np.any(self.offsets >= 1.0):
            raise ValueError("phase offsets must lie in [0, 1)")

    @classmethod
    def trot(cls, step_frequency: float = 1.4, duty_factor: float = 0.5,
             step_height: float = 0.14, start_time: float = 0.0):
        return cls("trot", step_frequency, duty_factor, TROT_OFFSETS.copy(),
                   step_height, start_time)

    @classmethod
    def crawl(cls, step_frequency: float = 0.4, duty_factor: float = 0.8,
              step_height: float = 0.14, start_time: float = 0.0):
        return cls("crawl", step_frequency, duty_factor, CRAWL_OFFSETS.copy(),
                   step_height, start_time)

    @classmethod
    def stand(cls):
        return cls("stand")

    @property
    def cycle_time(self) -> float:
        return 1.0 / self.step_frequency

    @property
    def swing_duration(self) -> float:
        return (1.0 - self.duty_factor) / self.step_frequency

    @property
    def stance_duration(self) -> float:
        return self.duty_factor / self.step_frequency

    def phases(self, t: float) -> np.ndarray:
        if self.gait == "stand" or t < self.start_time:
            return np.zeros(NUM_LEGS)
        return np.mod((t - self.start_time) * self.step_frequency + self.offsets, 1.0)

    def stance_flags(self, t: float) -> np.ndarray:
        if self.gait == "stand" or t < self.start_time:
            return np.ones(NUM_LEGS, dtype=bool)
        return self.phases(t) < self.duty_factor

    def swing_progress(self, t: float) -> np.ndarray:
        """Normalized swing phase s in [0,1) for swinging legs, 0 otherwise."""
        ph = self.phases(t)
        s = (ph - self.duty_factor) / (1.0 - self.duty_factor)
        return np.where(self.stance_flags(t), 0.0, np.clip(s, 0.0, 1.0))

    def time_to_touchdown(self, t: float, leg: int) -> float:
        """Remaining swing time of a swinging leg; 0 when in stance."""
        if self.stance_flags(t)[leg]:
            return 0.0
        s = self.swing_progress(t)[leg]
        return float((1.0 - s) * self.swing_duration)

    def time_since_touchdown(self, t: float, leg: int) -> float:
        ph = self.phases(t)[leg]
        if self.gait == "stand" or t < self.start_time:
            return t if self.gait == "stand" else t  # standing: since start
        if ph >= self.duty_factor:
            return 0.0
        return float(ph / self.step_frequency)

    def time_to_liftoff(self, t: float, leg: int) -> float:
        ph = self.phases(t)[leg]
        if self.gait == "stand" or t < self.start_time:
            return np.inf
        if ph >= self.duty_factor:
            return 0.0
        return float((self.duty_factor - ph) / self.step_frequency)


def gait_schedule_step(schedule: GaitSchedule, t: float):
    """(stance flags, per-leg phases) at time t."""
    return schedule.stance_flags(t), schedule.phases(t)
