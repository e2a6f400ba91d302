"""Reference planners with no map reasoning."""

from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np

from ..geometry import segment_cells
from .actions import Action, ActionSet, PlanContext


class RandomWalkPlanner:
    """Uniform choice over the action set; never claims completion.

    A forward step into inflated, blocking or out-of-map cells is swapped for
    a random turn, so the walk is collision-free but goal-blind. The RNG is
    seeded from ``seed`` and the step index, which keeps the planner a pure
    function of its context.
    """

    name = "random-walk"

    def __init__(self, seed: int = 0, action_set: Optional[ActionSet] = None):
        self.seed = int(seed)
        self.action_set = action_set or ActionSet()

    def plan(self, ctx: PlanContext) -> Tuple[Action, dict]:
        rng = np.random.default_rng([self.seed, ctx.step])
        actions = self.action_set.enumerate()
        action = actions[int(rng.integers(len(actions)))]
        safe = True
        if action.direction == "forward":
            safe = _forward_clear(ctx, action.step_length)
            if not safe:
                turns = [a for a in actions if a.direction != "forward"]
                action = turns[int(rng.integers(len(turns)))]
        return action, {"step": ctx.step, "action": action.to_dict(), "safety": {"forward_ok": safe}, "trapped": False}


class AlwaysLeftPlanner:
    """Turns left forever; useful for exercising the step cap."""

    name = "always-left"

    def __init__(self, angle_deg: float = 90.0):
        self.action = Action("left", math.radians(angle_deg))

    def plan(self, ctx: PlanContext) -> Tuple[Action, dict]:
        return self.action, {"step": ctx.step, "action": self.action.to_dict(), "trapped": False}


def _forward_clear(ctx: PlanContext, step: float) -> bool:
    grid = ctx.grid
    p = ctx.pose
    x1 = p.x + step * math.cos(p.yaw) - grid.origin[0]
    y1 = p.y + step * math.sin(p.yaw) - grid.origin[1]
    if not (0.0 <= x1 < grid.nx * grid.cell_size and 0.0 <= y1 < grid.ny * grid.cell_size):
        return False
    bad = grid.inflated | grid.blocking()
    cells = segment_cells(p.x - grid.origin[0], p.y - grid.origin[1], x1, y1, grid.cell_size)
    return all(grid.in_bounds(cx, cy) and not bad[cy, cx] for cx, cy in cells[1:])
