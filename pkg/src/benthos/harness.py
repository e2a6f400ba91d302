"""Episode runner, suite builder and report export."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .control import (
    ActuatorLimits,
    ControllerGains,
    NoiseConfig,
    OdometryEstimator,
    Tolerances,
    VehicleModel,
    VehicleState,
    action_to_setpoint,
    track_to_setpoint,
)
from .mapping import (
    OccupancyGrid,
    RayCastParams,
    completion_check,
    coverage,
    inflate_obstacles,
    integrate_points,
    raycast_visible,
    update_explored,
    write_map_snapshot,
)
from .planning.actions import Action, ActionSet, PlanContext, PlannerError, panoramic_init
from .sensor import CameraIntrinsics, DepthLimits, backproject, camera_to_world, classify_points, render_frame
from .world import (
    OYSTER_KINDS,
    WRECK_MODELS,
    ConfigError,
    GenerationConfig,
    Pose2D,
    WorldSpec,
    generate_world,
    load_world,
)

TERMINATIONS = ("completed", "step-cap", "trapped", "error")
METRIC_COLUMNS = ("env_id", "planner", "steps", "coverage", "collisions", "termination")


# ---------------------------------------------------------------- configs


@dataclass
class SensorConfig:
    width: int = 128
    height: int = 96
    hfov_deg: float = 90.0
    z_min: float = 0.1
    z_max: float = 20.0
    h_min: float = 1.0
    h_max: float = 10.0
    seg_flip_prob: float = 0.0

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.width, self.height, math.radians(self.hfov_deg))

    def limits(self) -> DepthLimits:
        return DepthLimits(self.z_min, self.z_max)


@dataclass
class MappingConfig:
    fov_deg: float = 90.0
    d_max: float = 10.0
    robot_radius: float = 0.5  # inflation margin

    def raycast(self) -> RayCastParams:
        return RayCastParams(math.radians(self.fov_deg), self.d_max)


@dataclass
class ControlConfig:
    kp: float = 0.8
    kd: float = 0.4
    k_psi: float = 1.5
    k_r: float = 0.5
    max_surge: float = 0.5
    max_sway: float = 0.5
    max_yaw_rate: float = 0.5
    pos_tol: float = 0.05
    yaw_tol_deg: float = 2.0
    tau: float = 0.5
    dt: float = 0.05
    tick_budget: int = 2000
    hull_radius: float = 0.4  # physical body used for contact checks
    noise: NoiseConfig = field(default_factory=NoiseConfig)


@dataclass
class RunConfig:
    env_id: str = "env"
    world: Optional[GenerationConfig] = None
    world_file: Optional[str] = None
    wreck_model: int = 0
    planner: str = "heuristic"
    planner_config: Dict[str, Any] = field(default_factory=dict)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    max_steps: int = 200
    seed: int = 0
    snapshot_every: int = 0  # 0 keeps only the final map
    out_dir: Optional[str] = None

    def validate(self) -> None:
        if self.max_steps <= 0:
            raise ConfigError("max_steps", "must be positive")
        if (self.world is None) == (self.world_file is None):
            raise ConfigError("world", "give exactly one of world params or world_file")
        if self.world_file is not None and not Path(self.world_file).is_file():
            raise ConfigError("world_file", f"no such file {self.world_file}")
        if self.world is not None:
            self.world.validate()

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown run key")
        if data.get("world") is not None:
            data["world"] = GenerationConfig.from_dict(data["world"])
        for key, typ in (("sensor", SensorConfig), ("mapping", MappingConfig)):
            if key in data:
                data[key] = _build(typ, data[key], key)
        if "control" in data:
            ctl = dict(data["control"])
            if "noise" in ctl:
                ctl["noise"] = _build(NoiseConfig, ctl["noise"], "control.noise")
            data["control"] = _build(ControlConfig, ctl, "control")
        cfg = cls(**data)
        cfg.validate()
        return cfg


def _build(typ, values, prefix):
    if isinstance(values, typ):
        return values
    known = {f.name for f in dataclasses.fields(typ)}
    for k in values:
        if k not in known:
            raise ConfigError(f"{prefix}.{k}", "unknown key")
    return typ(**values)


def load_run_config(path) -> RunConfig:
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    return RunConfig.from_dict(data)


def resolve_world(cfg: RunConfig) -> WorldSpec:
    if cfg.world_file is not None:
        return load_world(cfg.world_file)
    return generate_world(cfg.world, cfg.wreck_model)


# ---------------------------------------------------------------- planners


def make_planner(cfg: RunConfig, transport=None):
    """Planner instance for ``cfg.planner``; the VLM planner needs a transport."""
    pc = dict(cfg.planner_config)
    if cfg.planner == "heuristic":
        from .planning.heuristic import HeuristicConfig, HeuristicPlanner

        if "action_set" in pc:
            pc["action_set"] = ActionSet(**{k: tuple(v) for k, v in pc["action_set"].items()})
        pc.setdefault("robot_radius", cfg.mapping.robot_radius)
        pc.setdefault("fov", math.radians(cfg.mapping.fov_deg))
        pc.setdefault("d_max", cfg.mapping.d_max)
        return HeuristicPlanner(HeuristicConfig(**pc))
    if cfg.planner == "random-walk":
        from .planning.baseline import RandomWalkPlanner

        return RandomWalkPlanner(seed=pc.get("seed", cfg.seed))
    if cfg.planner == "always-left":
        from .planning.baseline import AlwaysLeftPlanner

        return AlwaysLeftPlanner(pc.get("angle_deg", 90.0))
    if cfg.planner == "vlm":
        from .planning.prompt import MissionConfig
        from .planning.vlm import EndpointConfig, VLMPlanner

        kind = cfg.world.kind if cfg.world is not None else load_world(cfg.world_file).kind
        mission = MissionConfig.for_kind(kind)
        endpoint = EndpointConfig(**pc.get("endpoint", {}))
        if transport is None:
            transport = make_transport(endpoint, pc.get("mode", "live"), pc.get("transcript"))
        return VLMPlanner(endpoint, mission, transport=transport)
    raise ConfigError("planner", f"unknown planner {cfg.planner!r}")


def make_transport(endpoint, mode: str, transcript: Optional[str]):
    from .planning.vlm import HttpTransport, RecordingTransport, ReplayTransport

    if mode == "live":
        return HttpTransport(endpoint)
    if transcript is None:
        raise ConfigError("planner_config.transcript", f"mode {mode!r} needs a transcript path")
    if mode == "record":
        return RecordingTransport(HttpTransport(endpoint), transcript)
    if mode == "replay":
        return ReplayTransport(transcript)
    raise ConfigError("planner_config.mode", f"unknown mode {mode!r}")


# ---------------------------------------------------------------- episode record


@dataclass
class StepRecord:
    step: int
    phase: str  # "init" or "plan"
    pose: List[float]
    action: Dict[str, Any]
    coverage_rate: float
    collided: bool = False
    map_snapshot: Optional[str] = None
    trace_ref: Optional[int] = None


@dataclass
class EpisodeRecord:
    env_id: str
    planner: str
    kind: str
    seed: int
    max_steps: int
    steps: List[StepRecord] = field(default_factory=list)
    traces: List[Dict[str, Any]] = field(default_factory=list)
    exploration_time: int = 0
    coverage_rate: float = 0.0
    collisions: int = 0
    termination: str = "error"
    cause: Optional[str] = None
    init_turns: int = 0
    monotonicity_violations: int = 0
    completion: List[bool] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)

    def summary(self) -> Dict[str, Any]:
        return {
            "env_id": self.env_id,
            "planner": self.planner,
            "steps": self.exploration_time,
            "coverage": round(self.coverage_rate, 4),
            "collisions": self.collisions,
            "termination": self.termination,
        }


def _r(x: float) -> float:
    return round(float(x), 9)


class _Episode:
    """Mutable state of one closed-loop run."""

    def __init__(self, cfg: RunConfig, world: WorldSpec):
        self.cfg = cfg
        self.world = world
        self.grid = OccupancyGrid.for_world(world)
        self.state = VehicleState(world.spawn)
        self.estimator = OdometryEstimator(cfg.control.noise)
        self.est = self.estimator.estimate(self.state, stopped=True)
        self.intr = cfg.sensor.intrinsics()
        self.limits = cfg.sensor.limits()
        self.ray = cfg.mapping.raycast()
        self.flip_rng = np.random.default_rng([cfg.seed, 7])
        self.frame = None
        self.violations = 0
        c = cfg.control
        self.gains = ControllerGains(c.kp, c.kd, c.k_psi, c.k_r)
        self.act_limits = ActuatorLimits(c.max_surge, c.max_sway, c.max_yaw_rate)
        self.tol = Tolerances(c.pos_tol, math.radians(c.yaw_tol_deg))
        self.model = VehicleModel(c.tau, c.dt)
        half = world.cell_size_m / 2.0
        self.bounds = (half, half, world.width_m - half, world.length_m - half)
        blocking = world.blocking_mask()
        self._blocking = blocking
        self._hull = c.hull_radius

    def collides(self, x: float, y: float) -> bool:
        """Hull disc overlaps a blocking cell, or the centre leaves the world."""
        w = self.world
        if not (0.0 <= x < w.width_m and 0.0 <= y < w.length_m):
            return True
        cs = w.cell_size_m
        r = self._hull
        k = int(math.ceil(r / cs)) + 1
        ix, iy = int(x // cs), int(y // cs)
        y0, y1 = max(iy - k, 0), min(iy + k + 1, w.ny)
        x0, x1 = max(ix - k, 0), min(ix + k + 1, w.nx)
        sub = self._blocking[y0:y1, x0:x1]
        if not sub.any():
            return False
        ys, xs = np.nonzero(sub)
        xs = xs + x0
        ys = ys + y0
        dx = np.maximum(np.maximum(xs * cs - x, 0.0), x - (xs + 1) * cs)
        dy = np.maximum(np.maximum(ys * cs - y, 0.0), y - (ys + 1) * cs)
        return bool((dx * dx + dy * dy < r * r).any())

    def perceive(self) -> None:
        s = self.cfg.sensor
        self.frame = render_frame(
            self.world,
            self.state.pose,
            self.intr,
            self.limits,
            flip_prob=s.seg_flip_prob,
            rng=self.flip_rng,
        )
        est_pose = self.est.pose
        bp = backproject(self.frame, camera_to_world(est_pose))
        cp = classify_points(bp, self.frame, s.h_min, s.h_max)
        g = self.grid
        integrate_points(g, cp)
        inflate_obstacles(g, self.cfg.mapping.robot_radius)
        ix, iy = g.cell_of(est_pose.x, est_pose.y)
        ix = min(max(ix, 0), g.nx - 1)
        iy = min(max(iy, 0), g.ny - 1)
        before = g.explored.copy()
        update_explored(g, raycast_visible(g, (ix, iy), est_pose.yaw, self.ray))
        if (before & ~g.explored).any():
            self.violations += 1

    def execute(self, action: Action) -> bool:
        """Track the action's setpoint; returns True on contact."""
        sp = action_to_setpoint(self.est, action, self.bounds)
        c = self.cfg.control
        res = track_to_setpoint(
            self.state,
            sp,
            self.gains,
            self.act_limits,
            self.tol,
            c.tick_budget,
            self.model,
            estimator=self.estimator,
            collides=self.collides,
        )
        self.state = VehicleState(res.state.pose)  # vehicle holds station between steps
        self.est = self.estimator.estimate(self.state, stopped=True)
        return res.collided

    def coverage(self) -> float:
        return coverage(self.grid, self.world).coverage_rate

    def pose_list(self) -> List[float]:
        p = self.state.pose
        return [_r(p.x), _r(p.y), _r(p.yaw)]

    def all_complete(self) -> List[bool]:
        return [completion_check(self.grid, m) for m in self.grid.clusters()]


def run_episode(cfg: RunConfig, planner=None, transport=None) -> EpisodeRecord:
    """Run one closed-loop episode; module errors end it with ``termination='error'``."""
    cfg.validate()
    world = resolve_world(cfg)
    planner = planner or make_planner(cfg, transport)
    rec = EpisodeRecord(cfg.env_id, planner.name, world.kind, cfg.seed, cfg.max_steps)
    out = Path(cfg.out_dir) if cfg.out_dir else None
    ep = None
    try:
        ep = _Episode(cfg, world)
        ep.perceive()
        memory: Dict[str, Any] = {}
        step = 0

        def snap(final: bool = False) -> Optional[str]:
            if out is None:
                return None
            every = cfg.snapshot_every
            if not final and not (every and step % every == 0):
                return None
            stem = f"map_{step:04d}"
            write_map_snapshot(ep.grid, ep.state.pose, out / "maps", stem)
            return f"maps/{stem}.png"

        init = panoramic_init(ep.ray.fov)
        rec.init_turns = min(len(init), cfg.max_steps)
        for action in init[: cfg.max_steps]:
            hit = ep.execute(action)
            rec.collisions += int(hit)
            ep.perceive()
            step += 1
            rec.steps.append(StepRecord(step, "init", ep.pose_list(), action.to_dict(), _r(ep.coverage()), hit, snap()))

        termination = "step-cap"
        while step < cfg.max_steps:
            ctx = PlanContext(ep.grid.copy(), ep.frame, ep.est.pose, step, cfg.max_steps - step, memory)
            try:
                action, trace = planner.plan(ctx)
            except PlannerError as exc:
                action, trace = exc.fallback, dict(exc.trace, error=str(exc))
            step += 1
            memory = trace.get("memory", {}) if isinstance(trace, dict) else {}
            rec.traces.append(trace)
            ref = len(rec.traces) - 1
            if action.is_stop:
                done = all(ep.all_complete())
                rec.steps.append(StepRecord(step, "plan", ep.pose_list(), action.to_dict(), _r(ep.coverage()), False, snap(), ref))
                if done and not trace.get("trapped", False):
                    termination = "completed"
                    break
                if trace.get("trapped", False):
                    termination = "trapped"
                    break
                continue
            hit = ep.execute(action)
            rec.collisions += int(hit)
            ep.perceive()
            rec.steps.append(StepRecord(step, "plan", ep.pose_list(), action.to_dict(), _r(ep.coverage()), hit, snap(), ref))
        rec.termination = termination
        rec.exploration_time = step
    except Exception as exc:  # noqa: BLE001 - any module failure ends the episode
        rec.termination = "error"
        rec.cause = f"{type(exc).__name__}: {exc}"
        rec.exploration_time = len(rec.steps)
    if ep is not None:
        rec.coverage_rate = _r(ep.coverage())
        rec.monotonicity_violations = ep.violations
        rec.completion = ep.all_complete()
    if out is not None:
        write_episode(rec, out, ep, cfg)
    return rec


def write_episode(rec: EpisodeRecord, out: Path, ep=None, cfg: Optional[RunConfig] = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if cfg is not None:
        portable = dataclasses.replace(cfg, out_dir=None)
        (out / "config.json").write_text(json.dumps(portable.to_dict(), sort_keys=True, indent=1) + "\n")
    (out / "record.json").write_text(rec.to_json() + "\n")
    with open(out / "trajectory.jsonl", "w") as fh:
        for s in rec.steps:
            fh.write(json.dumps(dataclasses.asdict(s), sort_keys=True, separators=(",", ":")) + "\n")
    with open(out / "traces.jsonl", "w") as fh:
        for t in rec.traces:
            fh.write(json.dumps(t, sort_keys=True, separators=(",", ":")) + "\n")
    if ep is not None:
        write_map_snapshot(ep.grid, ep.state.pose, out / "maps", "final")
        from .plotting import plot_episode

        plot_episode(rec, ep.world, ep.grid, out / "trajectory.png")


# ---------------------------------------------------------------- suite


def build_suite(seed: int = 0, planner: str = "heuristic", max_steps: int = 200) -> List[RunConfig]:
    """Ten oyster reefs spanning every morphology plus five distinct wrecks."""
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(15)
    oyster_kinds = list(OYSTER_KINDS) * 2 + ["oyster-fringing", "oyster-patch"]
    configs = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        w = float(rng.integers(80, 101)) * 0.5
        length = float(rng.integers(80, 101)) * 0.5
        world_seed = int(child.generate_state(1)[0])
        if i < 10:
            kind = oyster_kinds[i]
            env_id = f"oyster-{i + 1:02d}-{kind.split('-')[1]}"
            model = 0
        else:
            kind = "shipwreck"
            model = i - 10
            env_id = f"wreck-{model + 1:02d}-{WRECK_MODELS[model]}"
        gen = GenerationConfig(kind=kind, seed=world_seed, width_m=w, length_m=length)
        configs.append(
            RunConfig(env_id=env_id, world=gen, wreck_model=model, planner=planner, max_steps=max_steps, seed=world_seed)
        )
    return configs


@dataclass
class SuiteReport:
    seed: int
    rows: List[Dict[str, Any]]
    aggregates: Dict[str, Dict[str, float]]

    @classmethod
    def from_records(cls, seed: int, records: Sequence[EpisodeRecord]) -> "SuiteReport":
        rows = [r.summary() for r in records]
        return cls(seed, rows, aggregate(rows))

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1, allow_nan=False)


def aggregate(rows: Sequence[Dict[str, Any]]) -> Dict[str, Dict[str, float]]:
    """Mean steps and coverage per planner, overall and per world family."""
    out: Dict[str, Dict[str, float]] = {}
    for planner in sorted({r["planner"] for r in rows}):
        mine = [r for r in rows if r["planner"] == planner]
        agg = {"episodes": len(mine)}
        for tag, sel in (
            ("all", mine),
            ("oyster", [r for r in mine if r["env_id"].startswith("oyster")]),
            ("wreck", [r for r in mine if r["env_id"].startswith("wreck")]),
        ):
            if not sel:
                continue
            agg[f"{tag}_mean_steps"] = round(sum(r["steps"] for r in sel) / len(sel), 4)
            agg[f"{tag}_mean_coverage"] = round(sum(r["coverage"] for r in sel) / len(sel), 4)
        agg["completed"] = sum(r["termination"] == "completed" for r in mine)
        agg["collisions"] = sum(r["collisions"] for r in mine)
        out[planner] = agg
    return out


def _episode_job(args):
    cfg, = args
    return run_episode(cfg)


def run_suite(configs: Sequence[RunConfig], out_dir=None, seed: int = 0, workers: int = 1) -> SuiteReport:
    """Run every config; per-episode errors are recorded and the suite carries on."""
    if not configs:
        raise ConfigError("configs", "suite needs at least one config")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        if out.exists() and any(out.iterdir()):
            raise FileExistsError(f"output directory {out} is not empty")
        out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for cfg in configs:
        cfg = dataclasses.replace(cfg, out_dir=str(out / "episodes" / cfg.env_id) if out is not None else None)
        jobs.append((cfg,))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_episode_job, jobs))
    else:
        records = [_episode_job(j) for j in jobs]
    report = SuiteReport.from_records(seed, records)
    if out is not None:
        export_report(report, out)
    return report


def metrics_csv(report: SuiteReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in report.rows:
        w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])
    return buf.getvalue()


def summary_csv(report: SuiteReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("planner", "metric", "value"))
    for planner, agg in report.aggregates.items():
        for k in sorted(agg):
            w.writerow((planner, k, _fmt(agg[k])))
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def export_report(report: SuiteReport, out_dir) -> List[Path]:
    """Write metrics.csv, summary.csv, suite.json and the summary figure."""
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in (
            ("metrics.csv", metrics_csv(report)),
            ("summary.csv", summary_csv(report)),
            ("suite.json", report.to_json() + "\n"),
        ):
            p = out / name
            p.write_text(text)
            written.append(p)
        from .plotting import plot_suite

        p = out / "coverage.png"
        plot_suite(report, p)
        written.append(p)
    except OSError as exc:
        raise OSError(f"writing report to {out}: {exc}") from exc
    return written


def load_report(path) -> SuiteReport:
    data = json.loads(Path(path).read_text())
    return SuiteReport(data["seed"], data["rows"], data["aggregates"])


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    res = fn(*args, **kwargs)
    return res, time.perf_counter() - t0
