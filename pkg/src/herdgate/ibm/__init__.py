"""Individual-based bTB transmission simulator."""
from .params import SimParams, TestCharacteristics, demo_params
from .sim import Breakdown, ConservationError, TestEvent, World, init_world, run_herd_test, step_day
from .scenario import (
    HerdPerformance,
    ReplicateResult,
    ScenarioReport,
    SeShiftResult,
    measure_herd_se_sp,
    run_replicate,
    run_scenario,
    se_equivalent_for_target_hse,
    write_scenario_report,
)
from .world import HerdSpec, MovementEdge, WorldSpec, demo_world

__all__ = [
    "Breakdown",
    "ConservationError",
    "HerdPerformance",
    "HerdSpec",
    "MovementEdge",
    "ReplicateResult",
    "ScenarioReport",
    "SeShiftResult",
    "SimParams",
    "TestCharacteristics",
    "TestEvent",
    "World",
    "WorldSpec",
    "demo_params",
    "demo_world",
    "init_world",
    "measure_herd_se_sp",
    "run_replicate",
    "run_scenario",
    "se_equivalent_for_target_hse",
    "write_scenario_report",
    "run_herd_test",
    "step_day",
]
