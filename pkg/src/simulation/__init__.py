"""
Simulation package: the discrete-event network, Byzantine behaviours,
scenario files and the scenario runner.
"""

from .adversary import Adversary, ByzantineStrategy, ScriptEntry
from .network import (
    Delivery,
    DropRule,
    EventQueue,
    NetworkConfig,
    RunResult,
    ScriptedStep,
    SimWorld,
    StopCondition,
    TimerExpiry,
)
from .runner import (
    EXIT_OK,
    EXIT_PROPERTY_VIOLATION,
    EXIT_SCENARIO_ERROR,
    ScenarioRunner,
    run_scenario,
    sweep,
)
from .scenario import Scenario, load_scenario, scenario_from_dict, with_seed

__all__ = [
    'Adversary',
    'ByzantineStrategy',
    'Delivery',
    'DropRule',
    'EXIT_OK',
    'EXIT_PROPERTY_VIOLATION',
    'EXIT_SCENARIO_ERROR',
    'EventQueue',
    'NetworkConfig',
    'RunResult',
    'Scenario',
    'ScenarioRunner',
    'ScriptEntry',
    'ScriptedStep',
    'SimWorld',
    'StopCondition',
    'TimerExpiry',
    'load_scenario',
    'run_scenario',
    'scenario_from_dict',
    'sweep',
    'with_seed',
]
