"""Deterministic six-stage planner that mechanises the exploration reasoning
scaffold: distribution analysis, current target area, completion check,
next target / frontier, safety screen, discrete action selection.

The planner is a pure function of the :class:`PlanContext`. The little state
it carries between steps (the engaged cluster and any abandoned cells) goes
out in the trace under ``"memory"`` and comes back in via ``ctx.memory``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import ndimage
from skimage.graph import MCP_Geometric

from ..geometry import segment_cells, wrap_angle, wrap_angles
from ..mapping import RayCastParams, raycast_visible
from ..world import EIGHT, target_components
from .actions import STOP, Action, ActionSet, PlanContext

N_SECTORS = 8


@dataclass
class HeuristicConfig:
    w_d: float = 1.0  # per metre of path
    w_h: float = 0.2  # per radian of heading change
    w_t: float = 2.0  # per unit of local target density
    robot_radius: float = 0.5
    fov: float = math.pi / 2
    d_max: float = 10.0
    view_radius_m: float = 6.0
    density_radius: int = 2
    min_frontier_size: int = 3
    stop_explored_fraction: float = 0.9
    action_set: ActionSet = field(default_factory=ActionSet)


@dataclass
class _Scene:
    """Per-call derived layers."""

    ctx: PlanContext
    cell: Tuple[int, int]
    trav: np.ndarray
    occ: np.ndarray
    omni: np.ndarray
    bearing: np.ndarray
    labels: np.ndarray
    n_clusters: int


class HeuristicPlanner:
    name = "heuristic"

    def __init__(self, config: Optional[HeuristicConfig] = None):
        self.cfg = config or HeuristicConfig()

    # ------------------------------------------------------------ entry point

    def plan(self, ctx: PlanContext) -> Tuple[Action, dict]:
        cfg = self.cfg
        grid = ctx.grid
        scene = self._scene(ctx)
        memory = {
            "engaged_anchor": ctx.memory.get("engaged_anchor"),
            "abandoned": sorted(set(ctx.memory.get("abandoned", []))),
        }
        trace: Dict = {"step": ctx.step}

        # 1. distribution analysis
        trace["distribution"] = self._sector_density(scene)

        for _attempt in range(4):
            abandoned = np.zeros(grid.shape, dtype=bool)
            abandoned.flat[memory["abandoned"]] = True

            # 3. completion check on every known cluster
            complete, open_holes = self._completion(scene, abandoned)
            trace["completion"] = {
                "clusters": scene.n_clusters,
                "complete": int(sum(complete)),
                "unreachable": int(sum(1 for c, h in zip(complete, open_holes) if not c and not h)),
            }

            # 2/4. keep the engaged cluster until it is complete, then re-target
            engaged = self._engaged(scene, memory, complete, open_holes)
            memory["engaged_anchor"] = list(engaged[1]) if engaged else None
            trace["target_area"] = memory["engaged_anchor"]

            if engaged is not None:
                mode = "cluster"
                holes = (scene.labels == engaged[0]).copy()
                holes = ndimage.binary_dilation(holes, structure=EIGHT) & ~grid.explored & ~abandoned
            else:
                mode = "search"
                holes = ~grid.explored & ~abandoned
                frac = float(grid.explored.mean())
                trace["explored_fraction"] = round(frac, 6)
                if frac >= cfg.stop_explored_fraction:
                    return self._finish(trace, memory, mode, complete)
            trace["mode"] = mode

            # NBV over the discrete action set, with the safety screen
            best, gain, safety = self._best_view(scene, holes)
            trace["safety"] = safety
            if best is not None:
                trace["frontier"] = None
                trace["view_gain"] = gain
                return self._emit(trace, memory, best)

            # no single action reveals anything: travel toward a frontier
            goal_mask = self._goal_cells(scene, holes, mode)
            behind = holes & scene.omni
            if behind.any():
                # holes in view but outside every single-turn sector
                action = self._turn_toward(scene, behind)
                trace["frontier"] = None
                trace["view_gain"] = 0
                return self._emit(trace, memory, action)
            if goal_mask[scene.cell[1], scene.cell[0]]:
                newly = self._abandon_near(scene, holes, mode)
                memory["abandoned"] = sorted(set(memory["abandoned"]) | set(newly))
                continue
            nav = self._navigate(scene, goal_mask)
            if nav is None and mode == "cluster":
                # cluster seen from afar: approach through the frontier nearest it
                frontier = self._goal_cells(scene, ~grid.explored & ~abandoned, "search")
                to_holes = ndimage.distance_transform_edt(~holes) * grid.cell_size
                nav = self._navigate(scene, frontier, extra=cfg.w_d * to_holes)
            if nav is None:
                if mode == "cluster":
                    memory["abandoned"] = sorted(set(memory["abandoned"]) | set(np.flatnonzero(holes).tolist()))
                    continue
                return self._finish(trace, memory, mode, complete)
            action, frontier, info = nav
            trace["frontier"] = list(frontier)
            trace["frontier_score"] = info
            trace["view_gain"] = 0
            return self._emit(trace, memory, action)

        return self._finish(trace, memory, trace.get("mode", "search"), complete, trapped=True)

    # ------------------------------------------------------------ stages

    def _scene(self, ctx: PlanContext) -> _Scene:
        grid = ctx.grid
        ix, iy = grid.cell_of(ctx.pose.x, ctx.pose.y)
        ix = min(max(ix, 0), grid.nx - 1)
        iy = min(max(iy, 0), grid.ny - 1)
        occ = grid.occluders()
        trav = grid.explored & ~grid.inflated & ~grid.blocking()
        omni = raycast_visible(grid, (ix, iy), 0.0, RayCastParams(2 * math.pi, self.cfg.d_max), occluders=occ)
        ys, xs = np.mgrid[0 : grid.ny, 0 : grid.nx]
        bearing = np.arctan2(ys - iy, xs - ix).astype(np.float64)
        labels, n = target_components(grid.targets())
        return _Scene(ctx, (ix, iy), trav, occ, omni, bearing, labels, n)

    def _sector_density(self, scene: _Scene) -> List[int]:
        grid = scene.ctx.grid
        ix, iy = scene.cell
        ys, xs = np.nonzero(grid.targets())
        if len(xs) == 0:
            return [0] * N_SECTORS
        r = np.hypot(xs - ix, ys - iy) * grid.cell_size
        keep = r <= 2 * self.cfg.d_max
        rel = wrap_angles(np.arctan2(ys[keep] - iy, xs[keep] - ix) - scene.ctx.pose.yaw)
        bins = np.floor((rel + math.pi) / (2 * math.pi / N_SECTORS)).astype(int) % N_SECTORS
        return np.bincount(bins, minlength=N_SECTORS).tolist()

    def _completion(self, scene: _Scene, abandoned: np.ndarray):
        explored = scene.ctx.grid.explored
        complete, open_holes = [], []
        for i, sl in enumerate(ndimage.find_objects(scene.labels), start=1):
            sl = tuple(slice(max(s.start - 1, 0), s.stop + 1) for s in sl)
            cl = scene.labels[sl] == i
            ring = ndimage.binary_dilation(cl, structure=EIGHT)
            missing = ring & ~explored[sl]
            complete.append(not missing.any())
            open_holes.append(bool((missing & ~abandoned[sl]).any()))
        return complete, open_holes

    def _engaged(self, scene: _Scene, memory, complete, open_holes):
        labels = scene.labels
        anchor = memory.get("engaged_anchor")
        if anchor is not None:
            ax, ay = anchor
            if 0 <= ax < labels.shape[1] and 0 <= ay < labels.shape[0]:
                lab = int(labels[ay, ax])
                if lab > 0 and not complete[lab - 1] and open_holes[lab - 1]:
                    return lab, (ax, ay)
        ix, iy = scene.cell
        best = None
        for lab in range(1, scene.n_clusters + 1):
            if complete[lab - 1] or not open_holes[lab - 1]:
                continue
            ys, xs = np.nonzero(labels == lab)
            d2 = (xs - ix) ** 2 + (ys - iy) ** 2
            k = int(np.argmin(d2))
            key = (int(d2[k]), lab)
            if best is None or key < best[0]:
                best = (key, lab, (int(xs[k]), int(ys[k])))
        if best is None:
            return None
        return best[1], best[2]

    def _sector(self, scene: _Scene, yaw: float) -> np.ndarray:
        diff = np.abs(wrap_angles(scene.bearing - yaw))
        m = diff <= self.cfg.fov / 2.0 + 1e-9
        m[scene.cell[1], scene.cell[0]] = True
        return m

    def _forward_safe(self, scene: _Scene, step: float, yaw: Optional[float] = None) -> bool:
        grid = scene.ctx.grid
        p = scene.ctx.pose
        yaw = p.yaw if yaw is None else yaw
        x1 = p.x + step * math.cos(yaw)
        y1 = p.y + step * math.sin(yaw)
        half = grid.cell_size / 2.0
        if not (half <= x1 - grid.origin[0] <= grid.nx * grid.cell_size - half):
            return False
        if not (half <= y1 - grid.origin[1] <= grid.ny * grid.cell_size - half):
            return False
        cells = segment_cells(p.x - grid.origin[0], p.y - grid.origin[1], x1 - grid.origin[0], y1 - grid.origin[1], grid.cell_size)
        start = cells[0]
        for cx, cy in cells:
            if (cx, cy) == start:
                continue
            if not grid.in_bounds(cx, cy) or not scene.trav[cy, cx]:
                return False
        return True

    def _best_view(self, scene: _Scene, holes: np.ndarray):
        """Action revealing the most hole cells; ties go to enumeration order."""
        grid = scene.ctx.grid
        p = scene.ctx.pose
        params = RayCastParams(self.cfg.fov, self.cfg.d_max)
        best, best_gain = None, 0
        safety = {"forward_ok": [], "rejected": []}
        visible_holes = holes & scene.omni
        for action in self.cfg.action_set.enumerate():
            if action.direction == "forward":
                if not self._forward_safe(scene, action.step_length):
                    safety["rejected"].append(action.step_length)
                    continue
                safety["forward_ok"].append(action.step_length)
                x1 = p.x + action.step_length * math.cos(p.yaw)
                y1 = p.y + action.step_length * math.sin(p.yaw)
                vis = raycast_visible(grid, grid.cell_of(x1, y1), p.yaw, params, occluders=scene.occ)
                gain = int((vis & holes).sum())
            else:
                if not visible_holes.any():
                    continue
                yaw = wrap_angle(p.yaw + action.signed_turn)
                gain = int((visible_holes & self._sector(scene, yaw)).sum())
            if gain > best_gain:
                best, best_gain = action, gain
        return best, best_gain, safety

    def _turn_toward(self, scene: _Scene, cells: np.ndarray) -> Action:
        rel = wrap_angles(scene.bearing[cells] - scene.ctx.pose.yaw)
        left = int((rel > 0).sum())
        right = int((rel < 0).sum())
        return Action.turn(math.copysign(max(self.cfg.action_set.turn_angles), 1.0 if left >= right else -1.0))

    def _goal_cells(self, scene: _Scene, holes: np.ndarray, mode: str) -> np.ndarray:
        grid = scene.ctx.grid
        if not holes.any():
            return np.zeros(grid.shape, dtype=bool)
        if mode == "cluster":
            dist = ndimage.distance_transform_edt(~holes) * grid.cell_size
            return scene.trav & (dist <= self.cfg.view_radius_m)
        touching = ndimage.binary_dilation(holes, structure=EIGHT)
        frontier = scene.trav & touching
        lab, n = ndimage.label(frontier, structure=EIGHT)
        if n == 0:
            return frontier
        sizes = np.bincount(lab.ravel(), minlength=n + 1)
        big = sizes >= self.cfg.min_frontier_size
        big[0] = False
        return big[lab]

    def _abandon_near(self, scene: _Scene, holes: np.ndarray, mode: str) -> List[int]:
        grid = scene.ctx.grid
        ix, iy = scene.cell
        ys, xs = np.mgrid[0 : grid.ny, 0 : grid.nx]
        r = self.cfg.view_radius_m / grid.cell_size if mode == "cluster" else 2.0
        near = holes & ((xs - ix) ** 2 + (ys - iy) ** 2 <= r * r)
        if not near.any():
            near = holes
        return np.flatnonzero(near).tolist()

    def _navigate(self, scene: _Scene, goal_mask: np.ndarray, extra: Optional[np.ndarray] = None):
        grid = scene.ctx.grid
        cfg = self.cfg
        ix, iy = scene.cell
        costs = np.where(scene.trav, 1.0, np.inf)
        costs[iy, ix] = 1.0
        mcp = MCP_Geometric(costs, fully_connected=True)
        cum, _ = mcp.find_costs([(iy, ix)])
        reach = goal_mask & np.isfinite(cum)
        if not reach.any():
            return None
        gy, gx = np.nonzero(reach)
        dist = cum[gy, gx] * grid.cell_size
        head = np.abs(wrap_angles(np.arctan2(gy - iy, gx - ix) - scene.ctx.pose.yaw))
        k = cfg.density_radius
        density = ndimage.uniform_filter(grid.targets().astype(np.float64), size=2 * k + 1, mode="constant")[gy, gx]
        score = cfg.w_d * dist + cfg.w_h * head - cfg.w_t * density
        if extra is not None:
            score = score + extra[gy, gx]
        flat = gy * grid.nx + gx
        order = np.lexsort((flat, head, np.round(score, 9)))
        j = int(order[0])
        goal = (int(gx[j]), int(gy[j]))
        path = mcp.traceback((goal[1], goal[0]))
        action = self._follow(scene, [(c, r) for r, c in path])
        info = {"distance_m": round(float(dist[j]), 6), "heading_change": round(float(head[j]), 6), "density": round(float(density[j]), 6)}
        return action, goal, info

    def _follow(self, scene: _Scene, path: List[Tuple[int, int]]) -> Action:
        """Stage 6: bearing to a safe lookahead point, snapped to the action set."""
        grid = scene.ctx.grid
        p = scene.ctx.pose
        aset = self.cfg.action_set
        max_step = max(aset.step_lengths_m)
        look = path[min(1, len(path) - 1)]
        for cx, cy in reversed(path[1:]):
            x, y = grid.cell_centre(cx, cy)
            d = math.hypot(x - p.x, y - p.y)
            if d <= max_step + 1e-9 and self._segment_safe(scene, x, y):
                look = (cx, cy)
                break
        lx, ly = grid.cell_centre(*look)
        dist = math.hypot(lx - p.x, ly - p.y)
        err = wrap_angle(math.atan2(ly - p.y, lx - p.x) - p.yaw) if dist > 1e-9 else 0.0
        min_turn = min(aset.turn_angles)
        last = float(scene.ctx.memory.get("last_turn", 0.0))
        forward = None
        for s in sorted(aset.step_lengths_m, reverse=True):
            if s <= max(dist, min(aset.step_lengths_m)) + 1e-9 and self._forward_safe(scene, s):
                forward = Action("forward", 0.0, s)
                break
        # hysteresis band: a snapped turn must clearly improve alignment
        if abs(err) > 0.75 * min_turn:
            turn = math.copysign(_nearest(aset.turn_angles, abs(err)), err)
            undoes = last != 0.0 and abs(turn + last) < 1e-9
            if not undoes:
                return Action.turn(turn)
            if forward is not None:
                return forward
            return Action.turn(math.copysign(min_turn, last))
        if forward is not None:
            return forward
        # aligned but blocked: keep rotating the way we last turned
        sign = last if last != 0.0 else (err if err != 0.0 else 1.0)
        return Action.turn(math.copysign(min_turn, sign))

    def _segment_safe(self, scene: _Scene, x1: float, y1: float) -> bool:
        grid = scene.ctx.grid
        p = scene.ctx.pose
        cells = segment_cells(p.x - grid.origin[0], p.y - grid.origin[1], x1 - grid.origin[0], y1 - grid.origin[1], grid.cell_size)
        start = cells[0]
        return all((c == start) or (grid.in_bounds(*c) and scene.trav[c[1], c[0]]) for c in cells)

    # ------------------------------------------------------------ outputs

    def _emit(self, trace: dict, memory: dict, action: Action) -> Tuple[Action, dict]:
        trace["action"] = action.to_dict()
        memory["last_turn"] = action.signed_turn
        trace["memory"] = memory
        trace["trapped"] = False
        return action, trace

    def _finish(self, trace: dict, memory: dict, mode: str, complete: List[bool], trapped: bool = False):
        trace["mode"] = mode
        trace["action"] = STOP.to_dict()
        trace["memory"] = memory
        trace["trapped"] = bool(trapped or not all(complete))
        return STOP, trace


def _nearest(options, value: float) -> float:
    """Nearest member; ties resolve to the smaller option."""
    return min(sorted(options), key=lambda o: abs(o - value))
