import csv
import dataclasses
import io
import json

import numpy as np
import pytest

from benthos.cli import main
from benthos.harness import (
    METRIC_COLUMNS,
    RunConfig,
    SuiteReport,
    build_suite,
    export_report,
    load_run_config,
    metrics_csv,
    run_episode,
    run_suite,
)
from benthos.planning import STOP, Action, PlannerError
from benthos.world import OYSTER, ConfigError, GenerationConfig, Pose2D, WorldSpec, save_world


@pytest.fixture()
def tiny_world(tmp_path):
    n = 10
    lab = np.zeros((n, n), np.uint8)
    lab[4:6, 6:8] = OYSTER
    w = WorldSpec(n * 0.5, n * 0.5, 0.5, np.zeros((n, n)), lab, Pose2D(1.25, 2.5, 0.0), 0)
    path = tmp_path / "tiny.world"
    save_world(w, path)
    return str(path)


def _cfg(world_file, **kw):
    return RunConfig(env_id="tiny", world_file=world_file, **kw)


def test_trivial_world_completes(tiny_world):
    rec = run_episode(_cfg(tiny_world))
    assert rec.termination == "completed"
    assert rec.coverage_rate == 100.0 and rec.collisions == 0
    assert rec.init_turns == 4 and rec.exploration_time == len(rec.steps)
    assert rec.monotonicity_violations == 0 and all(rec.completion) and rec.exploration_time < 200


def test_always_left_hits_step_cap(tiny_world):
    rec = run_episode(_cfg(tiny_world, planner="always-left"))
    assert rec.termination == "step-cap" and rec.exploration_time == 200
    assert len(rec.steps) == 200 and rec.collisions == 0


def test_step_accounting_and_trace_refs(tiny_world):
    rec = run_episode(_cfg(tiny_world, planner="random-walk", max_steps=30))
    assert [s.step for s in rec.steps] == list(range(1, 31))
    assert [s.phase for s in rec.steps[:4]] == ["init"] * 4
    refs = [s.trace_ref for s in rec.steps[4:]]
    assert refs == list(range(len(rec.traces)))
    assert len(rec.traces) == rec.exploration_time - rec.init_turns
    cov = [s.coverage_rate for s in rec.steps]
    assert cov == sorted(cov)


def test_episode_is_deterministic(tiny_world):
    a = run_episode(_cfg(tiny_world, planner="random-walk", max_steps=25))
    b = run_episode(_cfg(tiny_world, planner="random-walk", max_steps=25))
    assert a.to_json() == b.to_json()


class _Boom:
    name = "boom"

    def plan(self, ctx):
        raise RuntimeError("kaput")


class _Refuses:
    name = "refuses"

    def __init__(self):
        self.calls = 0

    def plan(self, ctx):
        self.calls += 1
        if self.calls > 3:
            return STOP, {"trapped": True}
        raise PlannerError("cannot plan", trace={"why": "test"})


def test_module_failure_is_error_termination(tiny_world):
    rec = run_episode(_cfg(tiny_world), planner=_Boom())
    assert rec.termination == "error" and "kaput" in rec.cause
    json.loads(rec.to_json())


def test_planner_error_falls_back_to_stop(tiny_world):
    rec = run_episode(_cfg(tiny_world, max_steps=20), planner=_Refuses())
    # the fallback stop lands in a world whose targets are already mapped
    assert rec.termination == "completed" and rec.exploration_time == 5
    assert rec.traces[0] == {"why": "test", "error": "cannot plan"}


def test_episode_outputs(tiny_world, tmp_path):
    out = tmp_path / "ep"
    rec = run_episode(_cfg(tiny_world, out_dir=str(out), snapshot_every=2))
    for name in ("config.json", "record.json", "trajectory.jsonl", "traces.jsonl", "trajectory.png", "maps/final.png", "maps/final.pgm"):
        assert (out / name).is_file(), name
    lines = (out / "trajectory.jsonl").read_text().splitlines()
    assert len(lines) == rec.exploration_time
    cfg = load_run_config(out / "config.json")
    assert cfg.out_dir is None and cfg.world_file == tiny_world


def test_run_config_validation(tiny_world, tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"env_id": "x", "world_file": tiny_world, "bogus": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"env_id": "x"})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"world_file": tiny_world, "sensor": {"fps": 3}})
    cfg = RunConfig(env_id="g", world=GenerationConfig(kind="oyster-patch", seed=1))
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    y = tmp_path / "c.yaml"
    y.write_text(f"env_id: y\nworld_file: {tiny_world}\nmax_steps: 7\n")
    assert load_run_config(y).max_steps == 7


def test_build_suite_shape():
    cfgs = build_suite(0)
    assert len(cfgs) == 15 and len({c.env_id for c in cfgs}) == 15
    kinds = [c.world.kind for c in cfgs]
    assert kinds.count("shipwreck") == 5
    assert {"oyster-fringing", "oyster-string", "oyster-patch", "oyster-mixed"} <= set(kinds[:10])
    assert sorted(c.wreck_model for c in cfgs[10:]) == [0, 1, 2, 3, 4]
    for c in cfgs:
        assert 40 <= c.world.width_m <= 50 and 40 <= c.world.length_m <= 50
    assert [c.to_dict() for c in cfgs] == [c.to_dict() for c in build_suite(0)]
    assert [c.world.seed for c in cfgs] != [c.world.seed for c in build_suite(1)]


def test_run_suite_refuses_non_empty_dir(tiny_world, tmp_path):
    (tmp_path / "junk").write_text("x")
    with pytest.raises(FileExistsError):
        run_suite([_cfg(tiny_world)], tmp_path)


def test_suite_csv_schema_and_stable_export(tiny_world, tmp_path):
    cfgs = [_cfg(tiny_world), dataclasses.replace(_cfg(tiny_world, planner="random-walk", max_steps=12), env_id="tiny-rw")]
    rep = run_suite(cfgs, tmp_path / "a")
    rows = list(csv.reader(io.StringIO(metrics_csv(rep))))
    assert tuple(rows[0]) == METRIC_COLUMNS and len(rows) == 3
    assert rows[1] == ["tiny", "heuristic", "5", "100.0000", "0", "completed"]
    assert rep.aggregates["random-walk"]["all_mean_steps"] == 12
    export_report(rep, tmp_path / "b")
    export_report(SuiteReport(rep.seed, rep.rows, rep.aggregates), tmp_path / "c")
    for name in ("metrics.csv", "summary.csv", "suite.json", "coverage.png"):
        assert (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_run_and_report(tiny_world, tmp_path, capsys):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(_cfg(tiny_world).to_dict()))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    assert "completed" in capsys.readouterr().out
    suite = tmp_path / "suite"
    (suite / "episodes").mkdir(parents=True)
    (tmp_path / "run").rename(suite / "episodes" / "tiny")
    assert main(["report", str(suite)]) == 0
    assert (suite / "metrics.csv").read_text().splitlines()[1].startswith("tiny,heuristic,5,")


def test_cli_gen_suite_and_bad_input(tmp_path, capsys):
    assert main(["gen-suite", "--out", str(tmp_path / "g"), "--seed", "3"]) == 0
    assert len(list((tmp_path / "g").glob("*.world"))) == 15
    cfg = load_run_config(tmp_path / "g" / "wreck-01-ellipse.json")
    assert cfg.world.kind == "shipwreck"
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"env_id": "x", "colour": 1}')
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "colour" in capsys.readouterr().err
