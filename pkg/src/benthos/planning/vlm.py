"""Vision-language planner adapter: transport, response parsing, record/replay."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Tuple

import yaml

from .actions import STOP, Action, ActionSet, PlanContext
from .prompt import MissionConfig, build_prompt

log = logging.getLogger(__name__)

_FENCE = re.compile(r"```[A-Za-z]*[ \t]*\n(.*?)```", re.S)
_BRACES = re.compile(r"\{[^{}]*\}")


class ResponseParseError(ValueError):
    pass


class TransportError(RuntimeError):
    pass


class ReplayMismatch(RuntimeError):
    """The replayed request does not match the recorded one."""


# ---------------------------------------------------------------- parsing


def _candidate_blocks(text: str) -> List[str]:
    blocks = [(m.start(), m.group(1)) for m in _FENCE.finditer(text)]
    blocks += [(m.start(), m.group(0)) for m in _BRACES.finditer(text)]
    return [b for _, b in sorted(blocks, key=lambda t: t[0])]


def _nearest(options, value: float) -> float:
    return min(sorted(options), key=lambda o: abs(o - value))


def parse_response(text: str, action_set: Optional[ActionSet] = None) -> Tuple[Action, Dict[str, Any]]:
    """Extract the last ``{direction, turn_angle_deg, step_length_m}`` block.

    Values are snapped to the nearest member of the configured sets; the
    snap distances and any clamping warnings are returned alongside.
    """
    aset = action_set or ActionSet()
    data = None
    for block in reversed(_candidate_blocks(text)):
        try:
            parsed = yaml.safe_load(block)
        except yaml.YAMLError:
            continue
        if isinstance(parsed, dict) and "direction" in parsed:
            data = parsed
            break
    if data is None:
        raise ResponseParseError("no action block found in response")
    direction = str(data.get("direction", "")).strip().lower()
    if direction not in ("left", "right", "forward", "stop"):
        raise ResponseParseError(f"unknown direction {data.get('direction')!r}")
    try:
        turn = float(data.get("turn_angle_deg") or 0.0)
        step = float(data.get("step_length_m") or 0.0)
    except (TypeError, ValueError) as exc:
        raise ResponseParseError(f"non-numeric action field: {exc}") from None
    if not (math.isfinite(turn) and math.isfinite(step)):
        raise ResponseParseError("non-finite action field")
    info: Dict[str, Any] = {"raw": {"direction": direction, "turn_angle_deg": turn, "step_length_m": step}, "warnings": []}
    warn = info["warnings"]
    if direction in ("left", "right"):
        if turn < 0:
            warn.append("negative turn angle taken as magnitude")
            turn = -turn
        lo, hi = min(aset.turn_angles_deg), max(aset.turn_angles_deg)
        if not lo <= turn <= hi:
            warn.append(f"turn angle {turn:g} outside [{lo:g}, {hi:g}], clamped")
        snapped = _nearest(aset.turn_angles_deg, turn)
        info["snap_turn_deg"] = abs(snapped - turn)
        action = Action(direction, math.radians(snapped), 0.0)
    elif direction == "forward":
        lo, hi = min(aset.step_lengths_m), max(aset.step_lengths_m)
        if not lo <= step <= hi:
            warn.append(f"step length {step:g} outside [{lo:g}, {hi:g}], clamped")
        snapped = _nearest(aset.step_lengths_m, step)
        info["snap_step_m"] = abs(snapped - step)
        action = Action("forward", 0.0, snapped)
    else:
        if turn or step:
            warn.append("stop carries no turn or step; values ignored")
        action = STOP
    for w in warn:
        log.warning("parse_response: %s", w)
    return action, info


# ---------------------------------------------------------------- transports


@dataclass(frozen=True)
class EndpointConfig:
    url: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4o"
    api_key_env: str = "BENTHOS_VLM_API_KEY"
    timeout: float = 60.0
    retries: int = 2
    temperature: float = 0.0


class Transport(Protocol):
    def complete(self, request: Dict[str, Any]) -> str:
        ...


def request_digest(request: Dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(request, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


class HttpTransport:
    """Chat-completion POST over httpx; any failure surfaces as TransportError."""

    def __init__(self, endpoint: EndpointConfig, client=None):
        import httpx

        self.endpoint = endpoint
        self._httpx = httpx
        self.client = client or httpx.Client(timeout=endpoint.timeout)

    def complete(self, request: Dict[str, Any]) -> str:
        httpx = self._httpx
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.endpoint.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self.client.post(self.endpoint.url, json=request, headers=headers, timeout=self.endpoint.timeout)
            resp.raise_for_status()
            body = resp.json()
            return body["choices"][0]["message"]["content"]
        except httpx.TimeoutException as exc:
            raise TransportError(f"timeout: {exc}") from exc
        except httpx.HTTPError as exc:
            raise TransportError(f"http: {exc}") from exc
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed response body: {exc}") from exc


class RecordingTransport:
    """Wraps a live transport and appends every exchange to a JSONL transcript."""

    def __init__(self, inner: Transport, path):
        self.inner = inner
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("")

    def complete(self, request: Dict[str, Any]) -> str:
        entry: Dict[str, Any] = {"digest": request_digest(request)}
        try:
            text = self.inner.complete(request)
            entry["response"] = text
        except TransportError as exc:
            entry["error"] = str(exc)
            raise
        finally:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        return text


class ReplayTransport:
    """Serves recorded exchanges in order, checking each request digest."""

    def __init__(self, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        self.entries = [json.loads(line) for line in lines if line.strip()]
        self.index = 0

    def complete(self, request: Dict[str, Any]) -> str:
        if self.index >= len(self.entries):
            raise ReplayMismatch("transcript exhausted")
        entry = self.entries[self.index]
        self.index += 1
        digest = request_digest(request)
        if entry["digest"] != digest:
            raise ReplayMismatch(f"request {self.index} digest {digest[:12]} != recorded {entry['digest'][:12]}")
        if "error" in entry:
            raise TransportError(entry["error"])
        return entry["response"]


# ---------------------------------------------------------------- planner


class VLMPlanner:
    name = "vlm"

    def __init__(self, endpoint: EndpointConfig, mission: Optional[MissionConfig] = None, transport: Optional[Transport] = None):
        self.endpoint = endpoint
        self.mission = mission or MissionConfig()
        self.transport = transport if transport is not None else HttpTransport(endpoint)

    def plan(self, ctx: PlanContext) -> Tuple[Action, dict]:
        bundle = build_prompt(ctx, self.mission)
        request = {
            "model": self.endpoint.model,
            "messages": bundle.messages(),
            "temperature": self.endpoint.temperature,
        }
        trace: Dict[str, Any] = {
            "step": ctx.step,
            "prompt": {
                "system": bundle.system,
                "task": bundle.task,
                "images": [[name, hashlib.sha256(data).hexdigest()] for name, data in bundle.images],
                "digest": request_digest(request),
            },
            "attempts": [],
            "trapped": False,
        }
        text = None
        for attempt in range(self.endpoint.retries + 1):
            try:
                text = self.transport.complete(request)
                trace["attempts"].append({"attempt": attempt, "ok": True})
                break
            except TransportError as exc:
                trace["attempts"].append({"attempt": attempt, "ok": False, "cause": str(exc)})
                log.warning("vlm transport failure (attempt %d): %s", attempt, exc)
        if text is None:
            trace["failure"] = "transport retries exhausted"
            trace["action"] = STOP.to_dict()
            return STOP, trace
        trace["response"] = text
        try:
            action, info = parse_response(text, self.mission.action_set)
        except ResponseParseError as exc:
            trace["failure"] = f"parse: {exc}"
            trace["action"] = STOP.to_dict()
            log.warning("vlm response unparseable: %s", exc)
            return STOP, trace
        trace["parse"] = info
        trace["action"] = action.to_dict()
        return action, trace
