import json
import math

import httpx
import numpy as np
import pytest

from benthos.mapping import OBSTACLE, TARGET, OccupancyGrid, RayCastParams, inflate_obstacles, raycast_visible
from benthos.planning import (
    STOP,
    Action,
    ActionSet,
    AlwaysLeftPlanner,
    HeuristicConfig,
    HeuristicPlanner,
    PlanContext,
    PlannerError,
    RandomWalkPlanner,
    panoramic_init,
)
from benthos.planning.prompt import IMAGE_ORDER, MissionConfig, build_prompt
from benthos.planning.vlm import (
    EndpointConfig,
    HttpTransport,
    RecordingTransport,
    ReplayMismatch,
    ReplayTransport,
    ResponseParseError,
    TransportError,
    VLMPlanner,
    parse_response,
)
from benthos.sensor import render_frame
from benthos.world import GenerationConfig, Pose2D, generate_world
from oracles import los_visible

# ---------------------------------------------------------------- actions


def test_action_invariants():
    with pytest.raises(ValueError):
        Action("stop", 0.1)
    with pytest.raises(ValueError):
        Action("forward", 0.2, 1.0)
    with pytest.raises(ValueError):
        Action("jump")
    a = Action("right", math.radians(30))
    assert a.signed_turn == pytest.approx(-math.radians(30))
    assert Action.from_dict(a.to_dict()) == Action("right", math.radians(30.0))


def test_action_set_enumeration_and_membership():
    aset = ActionSet()
    acts = aset.enumerate()
    assert len(acts) == 3 + 8
    assert acts[0] == Action("forward", 0, 2.0)
    assert all(aset.contains(a) for a in acts) and aset.contains(STOP)
    assert not aset.contains(Action("left", math.radians(20)))


@pytest.mark.parametrize("deg, n", [(90, 4), (100, 4), (45, 8), (360, 1), (120, 3)])
def test_panoramic_turn_count(deg, n):
    turns = panoramic_init(math.radians(deg))
    assert len(turns) == n and all(t.direction == "left" for t in turns)


def test_panoramic_union_covers_clear_disk():
    rng = np.random.default_rng(4)
    g = OccupancyGrid(30, 30, 0.5)
    g.state[rng.random((30, 30)) < 0.08] = OBSTACLE
    g.state[15, 15] = 0
    fov, d_max = math.pi / 2, 6.0
    union = np.zeros((30, 30), bool)
    yaw = 0.3
    for t in panoramic_init(fov):
        union |= raycast_visible(g, (15, 15), yaw, RayCastParams(fov, d_max))
        yaw += t.turn_angle
    union |= raycast_visible(g, (15, 15), yaw, RayCastParams(fov, d_max))
    disk = los_visible(g.state == OBSTACLE, (15, 15), 0.0, 2 * math.pi, d_max, 0.5)
    assert (union >= disk).all()


# ---------------------------------------------------------------- heuristic


def _ctx(grid, x, y, yaw, memory=None, step=10):
    return PlanContext(grid, None, Pose2D(x, y, yaw), step, 200 - step, memory or {})


def _planner(**kw):
    kw.setdefault("d_max", 4.0)
    kw.setdefault("view_radius_m", 3.0)
    kw.setdefault("robot_radius", 1.0)
    return HeuristicPlanner(HeuristicConfig(**kw))


def test_all_clusters_complete_stops():
    g = OccupancyGrid(10, 10, 1.0)
    g.state[4:6, 4:6] = TARGET
    g.explored[:] = True
    a, trace = _planner().plan(_ctx(g, 1.5, 1.5, 0.0))
    assert a == STOP and trace["trapped"] is False


def test_single_frontier_dead_ahead_moves_forward():
    g = OccupancyGrid(10, 10, 1.0)
    g.explored[:, :8] = True
    a, trace = _planner().plan(_ctx(g, 1.5, 5.5, 0.0))
    assert a.direction == "forward"
    json.dumps(trace)


def test_blocked_forward_gives_a_turn():
    g = OccupancyGrid(12, 12, 1.0)
    g.explored[:, :9] = True
    g.state[5, 4] = OBSTACLE
    inflate_obstacles(g, 1.0)
    for yaw in (0.0, 0.1, -0.1):
        a, trace = _planner().plan(_ctx(g, 2.7, 5.5, yaw))
        assert a.direction in ("left", "right")
        assert trace["safety"]["forward_ok"] == []


def test_frontier_next_to_engaged_cluster_preferred():
    g = OccupancyGrid(24, 11, 1.0)
    g.explored[:, 3:14] = True
    g.state[4:7, 13] = TARGET  # cluster whose east side is still unknown
    a, trace = _planner(d_max=2.0, view_radius_m=1.5).plan(_ctx(g, 9.5, 5.5, 0.0))
    assert trace["mode"] == "cluster"
    assert trace["frontier"][0] >= 12
    assert a.direction == "forward"


def test_stays_on_engaged_cluster():
    g = OccupancyGrid(40, 12, 1.0)
    g.explored[:, 2:38] = True
    g.state[5, 3] = TARGET
    g.explored[4:7, 2] = False  # small engaged cluster, unfinished
    g.state[3:9, 30:34] = TARGET
    g.explored[3:9, 35:38] = False  # larger cluster, also unfinished
    g.explored[:, 34] = False
    ctx = _ctx(g, 20.5, 5.5, 0.0, memory={"engaged_anchor": [3, 5]})
    _, trace = _planner().plan(ctx)
    assert trace["target_area"] == [3, 5]
    # without memory the nearer cluster is engaged instead
    _, fresh = _planner().plan(_ctx(g, 24.5, 5.5, 0.0))
    assert fresh["target_area"][0] >= 30


def test_enclosed_robot_reports_trapped():
    g = OccupancyGrid(20, 20, 1.0)
    g.state[5, 5:12] = OBSTACLE
    g.state[11, 5:12] = OBSTACLE
    g.state[5:12, 5] = OBSTACLE
    g.state[5:12, 11] = OBSTACLE
    g.explored[5:12, 5:12] = True
    g.state[15, 15] = TARGET
    g.explored[15, 15] = True
    inflate_obstacles(g, 0.5)
    a, trace = _planner(robot_radius=0.5).plan(_ctx(g, 8.5, 8.5, 0.0))
    assert a == STOP and trace["trapped"] is True


def _segment_clear(grid, trav, x0, y0, x1, y1):
    for t in np.linspace(0, 1, 400):
        ix = int(math.floor(x0 + t * (x1 - x0)))
        iy = int(math.floor(y0 + t * (y1 - y0)))
        if (ix, iy) != (int(math.floor(x0)), int(math.floor(y0))) and not trav[iy, ix]:
            return False
    return True


def _reachable_frontier(grid, trav, start, min_size=3):
    from collections import deque

    from scipy import ndimage

    unexplored = ~grid.explored
    touching = ndimage.binary_dilation(unexplored, structure=np.ones((3, 3), bool))
    frontier = trav & touching
    lab, n = ndimage.label(frontier, structure=np.ones((3, 3), bool))
    sizes = np.bincount(lab.ravel())
    ok = frontier & (sizes[lab] >= min_size)
    passable = trav.copy()
    passable[start[1], start[0]] = True
    seen = {start}
    q = deque([start])
    while q:
        x, y = q.popleft()
        if ok[y, x]:
            return True
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                a, b = x + dx, y + dy
                if 0 <= a < grid.nx and 0 <= b < grid.ny and passable[b, a] and (a, b) not in seen:
                    seen.add((a, b))
                    q.append((a, b))
    return False


@pytest.mark.parametrize("seed", range(30))
def test_random_grids_safety_progress_and_purity(seed):
    rng = np.random.default_rng(seed)
    n = 24
    g = OccupancyGrid(n, n, 1.0)
    g.state[rng.random((n, n)) < 0.06] = OBSTACLE
    if seed % 2:
        g.state[rng.random((n, n)) < 0.04] = TARGET
    cx, cy = int(rng.integers(4, n - 4)), int(rng.integers(4, n - 4))
    g.state[cy, cx] = 0
    ys, xs = np.mgrid[0:n, 0:n]
    g.explored[(xs - cx) ** 2 + (ys - cy) ** 2 <= rng.integers(9, 60)] = True
    inflate_obstacles(g, 1.0)
    g.inflated[cy, cx] = False
    ctx = _ctx(g, cx + 0.5, cy + 0.5, float(rng.uniform(-math.pi, math.pi)))
    p = _planner()
    a, trace = p.plan(ctx)
    a2, trace2 = p.plan(ctx)
    assert a == a2 and json.dumps(trace, sort_keys=True) == json.dumps(trace2, sort_keys=True)
    assert ActionSet().contains(a)
    trav = g.explored & ~g.inflated & ~g.blocking()
    if a.direction == "forward":
        x1 = ctx.pose.x + a.step_length * math.cos(ctx.pose.yaw)
        y1 = ctx.pose.y + a.step_length * math.sin(ctx.pose.yaw)
        assert _segment_clear(g, trav, ctx.pose.x, ctx.pose.y, x1, y1)
    if g.explored.mean() < 0.9 and not g.targets().any() and _reachable_frontier(g, trav, (cx, cy)):
        assert not a.is_stop


def test_baselines():
    g = OccupancyGrid(10, 10, 1.0)
    g.explored[:] = True
    ctx = _ctx(g, 5.5, 5.5, 0.0)
    a1, _ = RandomWalkPlanner(seed=3).plan(ctx)
    a2, _ = RandomWalkPlanner(seed=3).plan(ctx)
    assert a1 == a2 and not a1.is_stop
    assert AlwaysLeftPlanner().plan(ctx)[0] == Action("left", math.pi / 2)
    g.state[5, 6] = OBSTACLE
    inflate_obstacles(g, 1.0)
    for step in range(40):
        a, _ = RandomWalkPlanner(seed=1).plan(_ctx(g, 5.5, 5.5, 0.0, step=step))
        assert a.direction != "forward"


def test_planner_error_carries_stop():
    e = PlannerError("boom")
    assert e.fallback == STOP


# ---------------------------------------------------------------- prompt


@pytest.fixture(scope="module")
def vision_ctx():
    w = generate_world(GenerationConfig(kind="oyster-patch", seed=2))
    g = OccupancyGrid.for_world(w)
    g.explored[40:60, 40:60] = True
    g.state[45:48, 50:52] = TARGET
    frame = render_frame(w, w.spawn)
    return PlanContext(g, frame, w.spawn, 12, 188, {})


HEADERS = (
    "Distribution analysis",
    "Select current target area",
    "Completion check",
    "Select next target/frontier",
    "Safety & feasibility",
    "Action selection",
)


def test_prompt_is_byte_deterministic(vision_ctx):
    a = build_prompt(vision_ctx)
    b = build_prompt(vision_ctx)
    assert a.digest() == b.digest()
    assert json.dumps(a.messages()) == json.dumps(b.messages())


def test_prompt_structure(vision_ctx):
    p = build_prompt(vision_ctx)
    for h in HEADERS:
        assert h in p.task
    order = [p.task.index(h) for h in HEADERS]
    assert order == sorted(order)
    assert [name for name, _ in p.images] == list(IMAGE_ORDER)
    assert all(data.startswith(b"\x89PNG") for _, data in p.images)
    assert "15, 30, 45, 90" in p.task and "0.5, 1, 2" in p.task
    assert "fully enclosed by grey" in p.task
    assert "step 12 of 200" in p.task
    msgs = p.messages()
    assert msgs[0]["role"] == "system" and len(msgs[1]["content"]) == 1 + len(IMAGE_ORDER)


def test_shipwreck_term_substituted(vision_ctx):
    p = build_prompt(vision_ctx, MissionConfig.for_kind("shipwreck"))
    text = p.system + p.task
    assert "oyster" not in text.lower()
    assert text.count("the shipwreck") >= 4


# ---------------------------------------------------------------- parsing


def test_parse_exact_block():
    a, info = parse_response('thinking...\n```yaml\ndirection: left\nturn_angle_deg: 30\nstep_length_m: 1.0\n```')
    assert a == Action("left", math.radians(30))
    assert info["snap_turn_deg"] == 0


def test_parse_snaps_to_nearest():
    a, info = parse_response('{direction: "left", turn_angle_deg: 33, step_length_m: 1.0}')
    assert a == Action("left", math.radians(30)) and info["snap_turn_deg"] == pytest.approx(3)
    a, info = parse_response('{"direction": "forward", "turn_angle_deg": 0, "step_length_m": 1.4}')
    assert a == Action("forward", 0, 1.0) and info["snap_step_m"] == pytest.approx(0.4)


def test_parse_clamps_with_warning():
    a, info = parse_response("```\ndirection: right\nturn_angle_deg: 170\n```")
    assert a == Action("right", math.radians(90)) and info["warnings"]
    a, info = parse_response("```\ndirection: forward\nstep_length_m: 9\n```")
    assert a == Action("forward", 0, 2.0) and info["warnings"]


def test_parse_takes_last_block():
    text = "```\ndirection: left\nturn_angle_deg: 15\n```\nOn reflection:\n```\ndirection: stop\n```"
    assert parse_response(text)[0] == STOP


@pytest.mark.parametrize("text", ["I would go forward a bit.", "```\nfoo: 1\n```", "{direction: sideways}", "{direction: left, turn_angle_deg: abc}"])
def test_parse_errors(text):
    with pytest.raises(ResponseParseError):
        parse_response(text)


@pytest.mark.parametrize("turn", [-400, -33, 0, 7.4, 7.6, 22.5, 50, 1000])
def test_snap_soundness(turn):
    for d in ("left", "right", "forward"):
        a, _ = parse_response(f"{{direction: {d}, turn_angle_deg: {turn}, step_length_m: {abs(turn) / 10}}}")
        assert ActionSet().contains(a)


# ---------------------------------------------------------------- transports


BLOCK = "Reasoning...\n```yaml\ndirection: right\nturn_angle_deg: 45\nstep_length_m: 0\n```"


def _mock_client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_vlm_planner_with_mock_endpoint(vision_ctx, monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": BLOCK}}]})

    monkeypatch.setenv("TEST_VLM_KEY", "sk-test")
    ep = EndpointConfig(url="http://vlm.invalid/v1/chat/completions", model="m", api_key_env="TEST_VLM_KEY")
    planner = VLMPlanner(ep, transport=HttpTransport(ep, client=_mock_client(handler)))
    a, trace = planner.plan(vision_ctx)
    assert a == Action("right", math.radians(45))
    assert seen["auth"] == "Bearer sk-test" and seen["body"]["model"] == "m"
    assert trace["response"] == BLOCK and trace["attempts"] == [{"attempt": 0, "ok": True}]


def test_vlm_timeouts_exhaust_retries(vision_ctx):
    calls = []

    def handler(request):
        calls.append(1)
        raise httpx.ReadTimeout("slow", request=request)

    ep = EndpointConfig(url="http://vlm.invalid/x", retries=2, timeout=0.01)
    a, trace = VLMPlanner(ep, transport=HttpTransport(ep, client=_mock_client(handler))).plan(vision_ctx)
    assert a == STOP and len(calls) == 3
    assert "exhausted" in trace["failure"] and all("timeout" in t["cause"] for t in trace["attempts"])


def test_vlm_unparseable_reply_is_stop(vision_ctx):
    class Fixed:
        def complete(self, request):
            return "no idea"

    a, trace = VLMPlanner(EndpointConfig(), transport=Fixed()).plan(vision_ctx)
    assert a == STOP and trace["failure"].startswith("parse")


def test_http_errors_become_transport_errors():
    ep = EndpointConfig(url="http://vlm.invalid/x")
    t = HttpTransport(ep, client=_mock_client(lambda r: httpx.Response(500)))
    with pytest.raises(TransportError):
        t.complete({"x": 1})
    t = HttpTransport(ep, client=_mock_client(lambda r: httpx.Response(200, json={"nope": 1})))
    with pytest.raises(TransportError):
        t.complete({"x": 1})


def test_record_then_replay(tmp_path):
    replies = iter(["a", "b"])

    class Live:
        def complete(self, request):
            if request.get("fail"):
                raise TransportError("down")
            return next(replies)

    rec = RecordingTransport(Live(), tmp_path / "t.jsonl")
    assert rec.complete({"q": 1}) == "a"
    with pytest.raises(TransportError):
        rec.complete({"fail": True})
    assert rec.complete({"q": 2}) == "b"
    rep = ReplayTransport(tmp_path / "t.jsonl")
    assert rep.complete({"q": 1}) == "a"
    with pytest.raises(TransportError):
        rep.complete({"fail": True})
    with pytest.raises(ReplayMismatch):
        rep.complete({"q": 3})
