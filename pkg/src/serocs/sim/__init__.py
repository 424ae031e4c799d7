"""Closed-loop simulation of the efficiency and safety controllers against scripted humans."""
from .human import ScriptedHuman, make_human, sweep_script, two_plan_script
from .metrics import SLACK_C, activation_intervals, metrics
from .runtime import SimLog, grasp_goal, object_cloud, run_scenario
from .scenario import (FORMAT_VERSION, PRESETS, ScenarioConfig, delivery_scenario, idle_sweep_scenario,
                       scenario_from_dict, scenario_to_dict, scenarios_equal)

__all__ = [
    "ScriptedHuman", "make_human", "sweep_script", "two_plan_script", "SLACK_C", "activation_intervals",
    "metrics", "SimLog", "grasp_goal", "object_cloud", "run_scenario", "FORMAT_VERSION", "PRESETS",
    "ScenarioConfig", "delivery_scenario", "idle_sweep_scenario", "scenario_from_dict", "scenario_to_dict",
    "scenarios_equal",
]
