"""Command-line entry point: ``benthos <verb> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .harness import (
    EpisodeRecord,
    RunConfig,
    SuiteReport,
    build_suite,
    export_report,
    load_run_config,
    resolve_world,
    run_episode,
    run_suite,
)
from .world import save_world

log = logging.getLogger("benthos")

PLANNERS = ("heuristic", "random-walk", "always-left", "vlm")


def _common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--seed", type=int, default=None, help="suite or run seed")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--max-steps", type=int, default=None, help="step cap per episode (default 200)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="benthos", description="Benthic exploration simulator and planner benchmark.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-suite", help="write the 15 suite run configs and world files")
    _common(p, out_required=True)
    p.add_argument("--planner", choices=PLANNERS, default="heuristic")

    p = sub.add_parser("run", help="run one episode from a run config")
    _common(p, out_required=True)
    p.add_argument("--config", required=True, help="run config (JSON or YAML)")
    p.add_argument("--planner", choices=PLANNERS, default=None)

    p = sub.add_parser("run-suite", help="run the default suite or a generated suite directory")
    _common(p, out_required=True)
    p.add_argument("--config", default=None, help="directory written by gen-suite")
    p.add_argument("--planner", choices=PLANNERS, default="heuristic")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("replay", help="re-run a recorded VLM episode offline")
    p.add_argument("run_dir", help="episode directory holding config.json and transcript.jsonl")
    p.add_argument("--out", required=True, help="where to write the replayed episode")

    p = sub.add_parser("report", help="rebuild CSV reports and figures from episode records")
    p.add_argument("run_dir", help="suite output directory (with episodes/)")
    p.add_argument("--out", default=None, help="report directory (default: run_dir)")
    return ap


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    if getattr(args, "planner", None):
        changes["planner"] = args.planner
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.max_steps is not None:
        changes["max_steps"] = args.max_steps
    return dataclasses.replace(cfg, **changes)


def _vlm_recording(cfg: RunConfig, out: Path) -> RunConfig:
    pc = dict(cfg.planner_config)
    pc.setdefault("mode", "record")
    pc.setdefault("transcript", str(out / "transcript.jsonl"))
    return dataclasses.replace(cfg, planner_config=pc)


def _print_row(rec: EpisodeRecord) -> None:
    s = rec.summary()
    print(f"{s['env_id']}\t{s['planner']}\tsteps={s['steps']}\tcoverage={s['coverage']:.2f}\t"
          f"collisions={s['collisions']}\t{s['termination']}" + (f"\t{rec.cause}" if rec.cause else ""))


def cmd_gen_suite(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    configs = build_suite(args.seed or 0, args.planner, args.max_steps or 200)
    for cfg in configs:
        world = resolve_world(cfg)
        save_world(world, out / f"{cfg.env_id}.world")
        (out / f"{cfg.env_id}.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=1) + "\n")
    print(f"wrote {len(configs)} configs to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    out = Path(args.out)
    if cfg.planner == "vlm":
        cfg = _vlm_recording(cfg, out)
    cfg = dataclasses.replace(cfg, out_dir=str(out))
    rec = run_episode(cfg)
    _print_row(rec)
    return 0 if rec.termination != "error" else 1


def cmd_run_suite(args) -> int:
    if args.config:
        paths = sorted(Path(args.config).glob("*.json"))
        configs = [_apply_overrides(load_run_config(p), args) for p in paths]
        if args.planner:
            configs = [dataclasses.replace(c, planner=args.planner) for c in configs]
    else:
        configs = build_suite(args.seed or 0, args.planner, args.max_steps or 200)
    out = Path(args.out)
    if args.planner == "vlm":
        configs = [_vlm_recording(c, out / "episodes" / c.env_id) for c in configs]
    report = run_suite(configs, out, seed=args.seed or 0, workers=args.workers)
    for row in report.rows:
        print("\t".join(str(row[k]) for k in ("env_id", "planner", "steps", "coverage", "collisions", "termination")))
    for planner, agg in report.aggregates.items():
        print(f"{planner}: mean coverage {agg['all_mean_coverage']:.2f}%  mean steps {agg['all_mean_steps']:.1f}")
    return 0 if all(r["termination"] != "error" for r in report.rows) else 1


def cmd_replay(args) -> int:
    src = Path(args.run_dir)
    cfg = RunConfig.from_dict(json.loads((src / "config.json").read_text()))
    pc = dict(cfg.planner_config, mode="replay", transcript=str(src / "transcript.jsonl"))
    cfg = dataclasses.replace(cfg, planner_config=pc, out_dir=str(Path(args.out)))
    rec = run_episode(cfg)
    _print_row(rec)
    original = (src / "record.json").read_text()
    same = original == rec.to_json() + "\n"
    print("replay identical" if same else "replay DIFFERS from recording")
    return 0 if same and rec.termination != "error" else 1


def cmd_report(args) -> int:
    src = Path(args.run_dir)
    records = sorted((src / "episodes").glob("*/record.json"))
    if not records:
        print(f"no episode records under {src / 'episodes'}", file=sys.stderr)
        return 1
    rows = []
    for p in records:
        data = json.loads(p.read_text())
        rows.append({k: data[k] for k in ("env_id", "planner")} | {
            "steps": data["exploration_time"],
            "coverage": round(data["coverage_rate"], 4),
            "collisions": data["collisions"],
            "termination": data["termination"],
        })
    seed = json.loads((src / "suite.json").read_text())["seed"] if (src / "suite.json").exists() else 0
    from .harness import aggregate

    report = SuiteReport(seed, rows, aggregate(rows))
    for p in export_report(report, Path(args.out) if args.out else src):
        print(p)
    return 0 if all(r["termination"] != "error" for r in rows) else 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler = {
        "gen-suite": cmd_gen_suite,
        "run": cmd_run,
        "run-suite": cmd_run_suite,
        "replay": cmd_replay,
        "report": cmd_report,
    }[args.verb]
    try:
        return handler(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
