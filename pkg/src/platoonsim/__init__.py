"""Monte Carlo emergency-braking simulator for mixed human/connected platoons."""

__version__ = "0.1.0"

from .config import SimConfig, SweepPlan, parse_config  # noqa: E402
from .scenario import ScenarioInstance, VehicleSpec, VehicleState, sample_scenario  # noqa: E402
from .engine import CrashRecord, IterationResult, run_iteration  # noqa: E402
from .experiment import AggregateMetrics, run_sweep  # noqa: E402

__all__ = [
    "SimConfig", "SweepPlan", "parse_config", "ScenarioInstance", "VehicleSpec", "VehicleState",
    "sample_scenario", "CrashRecord", "IterationResult", "run_iteration", "AggregateMetrics",
    "run_sweep",
]
