"""Discrete actions, the planning context and the planner contract."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Protocol, Tuple

import numpy as np

from ..mapping import OccupancyGrid, render_map_image
from ..sensor import SensorFrame
from ..world import Pose2D

DIRECTIONS = ("left", "right", "forward", "stop")


class PlannerError(RuntimeError):
    """Planner failure; ``fallback`` is the safe action the caller should use."""

    def __init__(self, message: str, trace: Optional[dict] = None):
        super().__init__(message)
        self.fallback = STOP
        self.trace = trace or {}


@dataclass(frozen=True)
class Action:
    direction: str
    turn_angle: float = 0.0  # radians, magnitude; the direction gives the sign
    step_length: float = 0.0  # metres

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.turn_angle < 0 or self.step_length < 0:
            raise ValueError("turn angle and step length are magnitudes")
        if self.direction == "stop" and (self.turn_angle or self.step_length):
            raise ValueError("stop carries no turn or step")
        if self.direction == "forward" and self.turn_angle:
            raise ValueError("forward carries no turn")

    @property
    def is_stop(self) -> bool:
        return self.direction == "stop"

    @property
    def signed_turn(self) -> float:
        if self.direction == "left":
            return self.turn_angle
        if self.direction == "right":
            return -self.turn_angle
        return 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "direction": self.direction,
            "turn_angle_deg": round(math.degrees(self.turn_angle), 9),
            "step_length_m": self.step_length,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Action":
        return cls(d["direction"], math.radians(d.get("turn_angle_deg", 0.0)), float(d.get("step_length_m", 0.0)))

    @classmethod
    def turn(cls, signed_angle: float) -> "Action":
        return cls("left" if signed_angle > 0 else "right", abs(signed_angle), 0.0)


STOP = Action("stop")


@dataclass(frozen=True)
class ActionSet:
    turn_angles_deg: Tuple[float, ...] = (15.0, 30.0, 45.0, 90.0)
    step_lengths_m: Tuple[float, ...] = (0.5, 1.0, 2.0)

    @property
    def turn_angles(self) -> Tuple[float, ...]:
        return tuple(math.radians(a) for a in self.turn_angles_deg)

    def contains(self, action: Action) -> bool:
        if action.direction == "stop":
            return True
        if action.direction == "forward":
            return action.step_length in self.step_lengths_m
        ok_turn = any(abs(math.degrees(action.turn_angle) - a) < 1e-9 for a in self.turn_angles_deg)
        return ok_turn and (action.step_length == 0.0 or action.step_length in self.step_lengths_m)

    def enumerate(self) -> List[Action]:
        """Every non-stop action: forwards longest first, then turns smallest first."""
        out = [Action("forward", 0.0, s) for s in sorted(self.step_lengths_m, reverse=True)]
        for a in sorted(self.turn_angles):
            out.append(Action("left", a))
            out.append(Action("right", a))
        return out


@dataclass
class PlanContext:
    """Everything a planner sees at one step; the grid is a private copy."""

    grid: OccupancyGrid
    frame: Optional[SensorFrame]
    pose: Pose2D
    step: int
    steps_remaining: int
    memory: Dict[str, Any] = field(default_factory=dict)

    @cached_property
    def map_image(self) -> np.ndarray:
        return render_map_image(self.grid, self.pose)


class Planner(Protocol):
    name: str

    def plan(self, ctx: PlanContext) -> Tuple[Action, dict]:
        ...


def panoramic_init(fov: float) -> List[Action]:
    """In-place turns of ``fov`` each whose sectors jointly cover a full turn."""
    n = int(math.ceil(2 * math.pi / fov - 1e-9))
    return [Action("left", fov, 0.0) for _ in range(n)]
