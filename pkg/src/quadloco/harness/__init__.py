"""Desk-scale simulator, gait scheduling, scenarios, and the CLI."""

from .controller import ControllerOptions, LocomotionController
from .gait import GaitSchedule, gait_schedule_step
from .scenario import (
    CONTROL_DT,
    ScenarioConfig,
    ScenarioResult,
    compare_results,
    run_scenario,
)
from .simulator import ContactEvent, SimulationBlowup, Simulator
from .swing import SwingTrajectory, swing_trajectory
from .world import (
    TERRAIN_PRESETS,
    TerrainRegion,
    TerrainWorld,
    flat_world,
    mixed_world,
    stairs_world,
)

__all__ = [
    "ControllerOptions", "LocomotionController", "GaitSchedule",
    "gait_schedule_step", "CONTROL_DT", "ScenarioConfig", "ScenarioResult",
    "compare_results", "run_scenario", "ContactEvent", "SimulationBlowup",
    "Simulator", "SwingTrajectory", "swing_trajectory", "TERRAIN_PRESETS",
    "TerrainRegion", "TerrainWorld", "flat_world", "mixed_world",
    "stairs_world",
]
