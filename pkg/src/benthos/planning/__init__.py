"""Planners behind one contract: heuristic, vision-language adapter and baselines."""

from .actions import STOP, Action, ActionSet, PlanContext, Planner, PlannerError, panoramic_init
from .baseline import AlwaysLeftPlanner, RandomWalkPlanner
from .heuristic import HeuristicConfig, HeuristicPlanner

__all__ = [
    "STOP",
    "Action",
    "ActionSet",
    "AlwaysLeftPlanner",
    "HeuristicConfig",
    "HeuristicPlanner",
    "PlanContext",
    "Planner",
    "PlannerError",
    "RandomWalkPlanner",
    "panoramic_init",
]
