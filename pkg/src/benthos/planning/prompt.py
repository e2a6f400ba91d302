"""Prompt assembly for the vision-language planner."""

from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from string import Template
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..mapping import png_bytes
from .actions import ActionSet, PlanContext

IMAGE_ORDER = ("rgb", "segmentation", "depth", "map")


def _template(name: str) -> str:
    return resources.files(__package__).joinpath("templates", name).read_text(encoding="utf-8")


def default_cot_steps() -> Tuple[Tuple[str, str], ...]:
    steps = []
    for line in _template("cot_steps.txt").splitlines():
        if line.strip():
            head, body = line.split("|", 1)
            steps.append((head.strip(), body.strip()))
    return tuple(steps)


@dataclass(frozen=True)
class MissionConfig:
    target_term: str = "oyster clusters"
    action_set: ActionSet = field(default_factory=ActionSet)
    cot_steps: Tuple[Tuple[str, str], ...] = field(default_factory=default_cot_steps)
    cell_size: float = 0.5
    z_max: float = 20.0

    @classmethod
    def for_kind(cls, kind: str, **kwargs) -> "MissionConfig":
        term = "the shipwreck" if kind == "shipwreck" else "oyster clusters"
        return cls(target_term=term, **kwargs)


@dataclass
class PromptBundle:
    system: str
    task: str
    cot: str
    images: List[Tuple[str, bytes]]  # (name, PNG bytes) in IMAGE_ORDER

    def messages(self) -> List[Dict[str, Any]]:
        """Chat-completion style message list with inline PNG data URLs."""
        content: List[Dict[str, Any]] = [{"type": "text", "text": self.task}]
        for _name, data in self.images:
            url = "data:image/png;base64," + base64.b64encode(data).decode("ascii")
            content.append({"type": "image_url", "image_url": {"url": url}})
        return [{"role": "system", "content": self.system}, {"role": "user", "content": content}]

    def digest(self) -> str:
        blob = json.dumps(self.messages(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _fmt_num(x: float) -> str:
    return f"{x:g}"


def build_prompt(ctx: PlanContext, mission: Optional[MissionConfig] = None) -> PromptBundle:
    """System text, task text with the reasoning scaffold, and the four images."""
    m = mission or MissionConfig()
    fields = {
        "target_term": m.target_term,
        "z_max": _fmt_num(m.z_max),
        "cell_size": _fmt_num(m.cell_size),
    }
    cot = "\n".join(
        f"{i}. {head}: {Template(body).substitute(fields)}" for i, (head, body) in enumerate(m.cot_steps, start=1)
    )
    p = ctx.pose
    fields.update(
        turn_angles=", ".join(_fmt_num(a) for a in m.action_set.turn_angles_deg),
        step_lengths=", ".join(_fmt_num(s) for s in m.action_set.step_lengths_m),
        step=str(ctx.step),
        max_steps=str(ctx.step + ctx.steps_remaining),
        steps_remaining=str(ctx.steps_remaining),
        x=f"{p.x:.2f}",
        y=f"{p.y:.2f}",
        heading=f"{math.degrees(p.yaw):.1f}",
        cot=cot,
    )
    system = Template(_template("system.txt")).substitute(fields)
    task = Template(_template("task.txt")).substitute(fields)
    images: List[Tuple[str, bytes]] = []
    if ctx.frame is not None:
        f = ctx.frame
        images.append(("rgb", png_bytes(f.rgb_proxy())))
        images.append(("segmentation", png_bytes((f.segmentation * 255).astype(np.uint8))))
        images.append(("depth", png_bytes(f.depth_image())))
    images.append(("map", png_bytes(ctx.map_image)))
    return PromptBundle(system, task, cot, images)
