"""Command-line entry points: serve the operator bridge, run headless
scenario scripts, verify replays, and train monitor models from records."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .monitor import train_nominal
from .scenario import Scenario
from .session import SessionRecord
from .system import (FeedingSystem, load_models, load_script, replay,
                     run_headless, script_subtasks_succeeded)


def _load_scenario(path) -> Scenario:
    try:
        return Scenario.from_yaml(path) if path else Scenario.default()
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        print(f"scenario parse error{loc}: {e}", file=sys.stderr)
        raise SystemExit(2)
    except (ValueError, KeyError) as e:
        print(f"scenario error: {e}", file=sys.stderr)
        raise SystemExit(2)


def cmd_serve(args) -> int:
    import uvicorn

    from .bridge import SimRunner, build_app

    scenario = _load_scenario(args.scenario)
    models, hashes = load_models(args.models)
    system = FeedingSystem(scenario, seed=args.seed, models=models,
                           model_hashes=hashes,
                           calibration_path=args.calibration)
    runner = SimRunner(system, speed=args.speed)
    ui_dir = args.ui_dir
    if ui_dir is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = candidate if candidate.exists() else None
    app = build_app(runner, ui_dir=ui_dir)
    runner.start()
    print(f"serving on port {args.port} (scenario hash "
          f"{scenario.canonical_hash()[:12]}, seed {system.seed})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_run(args) -> int:
    scenario = _load_scenario(args.scenario)
    try:
        script = load_script(args.script) if args.script else []
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        print(f"script parse error{loc}: {e}", file=sys.stderr)
        return 2
    models, hashes = load_models(args.models)
    record = run_headless(scenario, script, seed=args.seed, models=models,
                          model_hashes=hashes, max_seconds=args.max_seconds)
    if args.out:
        record.save(args.out)
        print(f"record written to {args.out}")
    summary = record.summary()
    print(json.dumps(summary, indent=2))
    ok = script_subtasks_succeeded(record)
    print("all scripted subtasks succeeded" if ok else "some subtasks failed")
    return 0 if ok else 1


def cmd_replay(args) -> int:
    scenario = _load_scenario(args.scenario)
    record = SessionRecord.load(args.record)
    models, hashes = load_models(args.models)
    try:
        report = replay(record, scenario, models=models, model_hashes=hashes,
                        max_seconds=args.max_seconds)
    except ValueError as e:
        print(f"replay refused: {e}", file=sys.stderr)
        return 2
    print(report.describe())
    return 0 if report.match else 1


def cmd_train_monitor(args) -> int:
    scenario = _load_scenario(args.scenario)
    sequences, progresses = collect_training_set(args.data, args.subtask)
    print(f"{len(sequences)} labeled non-anomalous executions for "
          f"{args.subtask!r}")
    try:
        model = train_nominal(sequences, progresses, args.subtask,
                              scenario.monitor)
    except ValueError as e:
        print(f"training failed: {e}", file=sys.stderr)
        return 1
    out = args.out or f"{args.subtask}.json"
    model.save(out)
    digest = hashlib.sha256(Path(out).read_bytes()).hexdigest()
    print(f"model written to {out} (sha256 {digest[:12]})")
    return 0


def collect_training_set(data_dir, subtask: str):
    """Feature sequences from session records: successful executions of the
    subtask whose user feedback label is `success`."""
    sequences, progresses = [], []
    for path in sorted(Path(data_dir).glob("*.jsonl")):
        record = SessionRecord.load(path)
        outcomes = {e.data["execution"]: e.data for e in record.events
                    if e.kind == "outcome"}
        labels = {e.data["execution"]: e.data["label"] for e in record.events
                  if e.kind == "feedback"}
        for e in record.events:
            if e.kind != "features" or e.data["subtask"] != subtask:
                continue
            ex = e.data["execution"]
            oc = outcomes.get(ex)
            # aborted executions end with an "abort" outcome; exclude them
            if not oc or oc.get("subtask") != subtask or not oc.get("success"):
                continue
            if labels.get(ex) != "success":
                continue   # unlabeled and failure-labeled runs are excluded
            sequences.append(np.array(e.data["features"], dtype=float))
            progresses.append(np.array(e.data["progresses"], dtype=float))
    return sequences, progresses


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="feedsim",
                                     description="desk-scale active-feeding "
                                                 "simulator and control stack")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("serve", help="serve the operator bridge + UI")
    p.add_argument("--scenario", default=None)
    p.add_argument("--port", type=int, default=8720)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--models", default=None, help="nominal-model directory")
    p.add_argument("--speed", type=float, default=1.0,
                   help="sim seconds per wall second (0 = unpaced)")
    p.add_argument("--ui-dir", default=None)
    p.add_argument("--calibration", default=None,
                   help="path of the persisted calibration file")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("run", help="run a timed command script headlessly")
    p.add_argument("--scenario", default=None)
    p.add_argument("--script", default=None)
    p.add_argument("--out", default=None, help="session record output path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--models", default=None)
    p.add_argument("--max-seconds", type=float, default=600.0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="re-run a session record and verify")
    p.add_argument("--record", required=True)
    p.add_argument("--scenario", default=None)
    p.add_argument("--models", default=None)
    p.add_argument("--max-seconds", type=float, default=600.0)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("train-monitor", help="train a nominal model from records")
    p.add_argument("--data", required=True, help="directory of session records")
    p.add_argument("--subtask", required=True, choices=["scoop", "deliver", "wipe"])
    p.add_argument("--out", default=None)
    p.add_argument("--scenario", default=None)
    p.set_defaults(func=cmd_train_monitor)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
