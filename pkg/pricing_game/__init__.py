from .exceptions import (
    ConfigError,
    DegenerateInstanceError,
    InstanceSizeError,
    ModelDomainError,
    PivotCyclingError,
    PricingGameError,
)
from .net_model import ChannelMatrices, LinkPopulation, PowerControlConfig, PowerVector
from .lower_game import AllocationState, ConvergenceTrace, LowerGameInstance, br_iterate, lb_iterate
from .upper_pricing import LowerSolver, PricingMethod, PricingOutcome, UpperInstance, solve_price
from .scenario import Scenario, ScenarioConfig, generate_scenario
from .experiment import ExperimentResult, MethodSpec, run_experiment, run_sweep

__all__ = [
    "PricingGameError", "ModelDomainError", "InstanceSizeError",
    "DegenerateInstanceError", "PivotCyclingError", "ConfigError",
    "ChannelMatrices", "LinkPopulation", "PowerControlConfig", "PowerVector",
    "AllocationState", "ConvergenceTrace", "LowerGameInstance", "br_iterate", "lb_iterate",
    "LowerSolver", "PricingMethod", "PricingOutcome", "UpperInstance", "solve_price",
    "Scenario", "ScenarioConfig", "generate_scenario",
    "ExperimentResult", "MethodSpec", "run_experiment", "run_sweep",
]
