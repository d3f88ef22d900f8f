"""Optimal multi-agent pathfinding for disk agents in continuous time."""

from .ccbs import CCBS, VARIANTS, Instance, Solution, SolverConfig, solve, variant_config
from .graph import Graph, GridMap, HeuristicTable, build_grid_graph, load_movingai_map, load_roadmap, load_scen
from .motion import DEFAULT_RADIUS, Action, Interval, Plan, TimedAction
from .validate import ValidationReport, brute_force_soc, validate_solution

__version__ = "0.1.0"

__all__ = [
    "CCBS", "VARIANTS", "Instance", "Solution", "SolverConfig", "solve", "variant_config",
    "Graph", "GridMap", "HeuristicTable", "build_grid_graph", "load_movingai_map", "load_roadmap", "load_scen",
    "DEFAULT_RADIUS", "Action", "Interval", "Plan", "TimedAction",
    "ValidationReport", "brute_force_soc", "validate_solution",
]
