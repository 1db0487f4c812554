"""Full-stack assembly: world + controller + estimators + task executive +
execution monitor, advanced by a single deterministic 1 kHz loop.

Also the headless scenario runner (timed command scripts -> session records)
and bit-for-bit replay verification.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .control import TrackingController
from .monitor import (WINDOW_TICKS, AnomalyEvent, NominalModel, OnlineDetector,
                      extract_features, label_anomaly)
from .perception import MouthTracker
from .scenario import Scenario
from .session import Event, SessionLog, SessionRecord, transition_signature
from .task import Command, TaskManager, TaskState
from .world import World


class MonitorRuntime:
    """Consumes the SensorFrame stream in parallel with scooping/delivery.

    Buffers 100 ms windows, extracts features, and scores them against the
    per-subtask nominal model; posting the resulting stop command is the
    system loop's job so the monitor can never block control.
    """

    def __init__(self, cfg: dict, models: dict[str, NominalModel] | None = None):
        self.cfg = cfg
        self.models = models or {}
        self.sensitivity = float(cfg.get("sensitivity", 2.0))
        self.label_min_cosine = float(cfg.get("label_min_cosine", 0.8))
        self.subtask: str | None = None
        self._frames: list = []
        self._features: list = []
        self._progresses: list = []
        self._detector: OnlineDetector | None = None
        self._warned = False

    def set_sensitivity(self, s: float):
        self.sensitivity = float(s)
        if self._detector is not None:
            self._detector.sensitivity = float(s)

    @property
    def active(self) -> bool:
        return self.subtask is not None

    def start(self, subtask: str) -> bool:
        """Returns True when a model backs this subtask (detection armed)."""
        self.subtask = subtask
        self._frames = []
        self._features = []
        self._progresses = []
        model = self.models.get(subtask)
        self._detector = (OnlineDetector(model, self.sensitivity)
                          if model is not None else None)
        return self._detector is not None

    def stop(self):
        feats = np.array(self._features).reshape(-1, len(self._features[0]) if self._features else 6)
        progs = np.array(self._progresses)
        self.subtask = None
        self._frames = []
        self._features = []
        self._progresses = []
        self._detector = None
        return feats, progs

    def ingest(self, frame, progress: float) -> AnomalyEvent | None:
        if not self.active:
            return None
        self._frames.append(frame)
        if len(self._frames) < WINDOW_TICKS:
            return None
        feat = extract_features(self._frames, progress)
        self._frames = []
        self._features.append(feat)
        self._progresses.append(progress)
        if self._detector is None:
            return None
        event = self._detector.ingest(feat, progress, frame.t)
        if event is not None:
            label = label_anomaly(feat, self.label_min_cosine)
            return AnomalyEvent(timestamp=event.timestamp, subtask=event.subtask,
                                score=event.score, threshold=event.threshold,
                                label=label)
        return None


class FeedingSystem:
    """One simulated feeding workstation plus its control and task stack."""

    def __init__(self, scenario: Scenario, seed: int | None = None,
                 models: dict[str, NominalModel] | None = None,
                 model_hashes: dict[str, str] | None = None,
                 calibration_path=None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else int(seed)
        self.world = World(scenario, seed=self.seed)
        self.ctl = TrackingController(self.world)
        self.tracker = MouthTracker(scenario.camera, scenario.perception)
        self.log = SessionLog()
        self.task = TaskManager(self.world, self.ctl, self.tracker, self.log,
                                calibration_path=calibration_path)
        self.monitor = MonitorRuntime(scenario.monitor, models)
        self.model_hashes = model_hashes or {}
        self.inbox: deque[Command] = deque()
        self.listeners: list = []      # callables(Event), notified in order

    # ------------------------------------------------------------- commands

    def post(self, cmd: Command):
        self.inbox.append(cmd)

    # ----------------------------------------------------------------- loop

    def tick(self):
        """One 1 kHz step: drain commands, advance the task, run the monitor."""
        n_before = len(self.log.events)

        while self.inbox:
            cmd = self.inbox.popleft()
            self.log.append(self.world.tick, self.world.time, "command",
                            command=cmd.kind, source=cmd.source,
                            direction=cmd.direction, label=cmd.label)
            self.task.handle_command(cmd)

        frame = self.task.tick()

        # monitor lifecycle follows the FSM state
        if self.task.monitored and self.monitor.subtask != self.task.active_subtask:
            armed = self.monitor.start(self.task.active_subtask)
            if not armed and not self.monitor._warned:
                self.log.append(self.world.tick, self.world.time, "note",
                                text=f"monitor idle: no nominal model for "
                                     f"{self.task.active_subtask}")
                self.monitor._warned = True
        elif not self.task.monitored and self.monitor.active:
            sub = self.monitor.subtask
            feats, progs = self.monitor.stop()
            if len(feats):
                self.log.append(self.world.tick, self.world.time, "features",
                                subtask=sub, execution=self.task.execution_index,
                                features=[[float(v) for v in f] for f in feats],
                                progresses=[float(p) for p in progs])

        if self.monitor.active:
            event = self.monitor.ingest(frame, self.task.progress())
            if event is not None:
                self.log.append(self.world.tick, self.world.time, "anomaly",
                                subtask=event.subtask, score=event.score,
                                threshold=event.threshold, label=event.label,
                                source="monitor")
                self.post(Command(kind="stop", source="monitor"))

        for ev in self.log.events[n_before:]:
            for listener in self.listeners:
                listener(ev)
        return frame

    def run_seconds(self, seconds: float):
        for _ in range(int(round(seconds * 1000))):
            self.tick()

    def run_until_idle(self, timeout_s: float = 120.0) -> bool:
        t0 = self.world.time
        while self.world.time - t0 < timeout_s:
            self.tick()
            if (self.task.state == TaskState.IDLE and not self.inbox
                    and self.task._activity is None):
                return True
        return False

    # ------------------------------------------------------------ snapshots

    def scene_static(self) -> dict:
        sc = self.scenario
        return {
            "bowl_center": [float(v) for v in sc.bowl.center],
            "bowl_diameter": sc.bowl.diameter,
            "guard_height": sc.bowl.guard_height,
            "bar": [[float(v) for v in sc.bar_start], [float(v) for v in sc.bar_end]],
            "mouth_nominal": _pose_json(sc.mouth_pose),
            "utensil": {"name": sc.utensil.name, "kind": sc.utensil.kind},
            "grid_n": sc.bowl.grid_n,
        }

    def scene_snapshot(self) -> dict:
        w = self.world
        tip = w.tip_pose()
        est = self.tracker.last_estimate
        return {
            "t": w.time,
            "state": self.task.state.value,
            "banner": self.task.banner,
            "theta": [float(v) for v in w.theta],
            "tip": _pose_json(tip),
            "tilt_deg": w.tip_tilt_deg(),
            "food_total_g": w.bowl_total_g,
            "food_grid": [[float(v) for v in row] for row in w.food],
            "utensil_load_g": w.utensil_top_g + w.utensil_bottom_g,
            "eaten_g": w.eaten_g,
            "spilled_g": w.spilled_g,
            "mouth": _pose_json(w.mouth_pose),
            "mouth_open": bool(w.mouth_open),
            "mouth_estimate": None if est is None else {
                "pose": _pose_json(est.pose), "confidence": est.confidence,
                "open": est.open_flag, "timestamp": est.timestamp,
                "stale": est.is_stale(w.time)},
            "calibration_steps": list(self.task.calibration.steps),
            "progress": self.task.progress(),
        }


def _pose_json(pose) -> dict:
    return {"position": [float(v) for v in pose.position],
            "wxyz": [float(v) for v in pose.orientation.wxyz]}


# ------------------------------------------------------------------ headless

def load_script(path) -> list[dict]:
    doc = yaml.safe_load(Path(path).read_text())
    if doc is None:
        return []
    if not isinstance(doc, list):
        raise ValueError(f"command script {path} must be a list")
    return sorted((dict(e) for e in doc), key=lambda e: float(e["at"]))


def load_models(model_dir) -> tuple[dict, dict]:
    """Load nominal models from <dir>/<subtask>.json; returns (models, hashes)."""
    models: dict[str, NominalModel] = {}
    hashes: dict[str, str] = {}
    if model_dir is None:
        return models, hashes
    d = Path(model_dir)
    if not d.exists():
        return models, hashes
    for p in sorted(d.glob("*.json")):
        m = NominalModel.load(p)
        models[m.subtask] = m
        hashes[m.subtask] = hashlib.sha256(p.read_bytes()).hexdigest()
    return models, hashes


def _script_command(entry: dict, source: str = "cli") -> Command:
    return Command(kind=entry["command"], source=entry.get("source", source),
                   direction=entry.get("direction"), label=entry.get("label"))


def run_headless(scenario: Scenario, script: list[dict], seed: int | None = None,
                 models: dict | None = None, model_hashes: dict | None = None,
                 max_seconds: float = 600.0) -> SessionRecord:
    """Execute a timed command script against the full stack in simulated time."""
    system = FeedingSystem(scenario, seed=seed, models=models,
                           model_hashes=model_hashes)
    pending = sorted((dict(e) for e in script), key=lambda e: float(e["at"]))
    while True:
        while pending and float(pending[0]["at"]) <= system.world.time + 1e-9:
            system.post(_script_command(pending.pop(0)))
        system.tick()
        done = (not pending and not system.inbox
                and system.task.state == TaskState.IDLE
                and system.task._activity is None)
        if done or system.world.time >= max_seconds:
            if not done:
                system.log.append(system.world.tick, system.world.time, "note",
                                  text="headless run hit the time cap")
            break
    return SessionRecord(scenario_hash=scenario.canonical_hash(),
                         seed=system.seed, events=list(system.log.events),
                         monitor_models=dict(system.model_hashes))


@dataclass
class ReplayReport:
    match: bool
    expected: list = field(default_factory=list)
    got: list = field(default_factory=list)
    first_divergence: int | None = None

    def describe(self) -> str:
        if self.match:
            return f"replay matched: {len(self.expected)} transitions identical"
        return (f"replay diverged at transition {self.first_divergence}: "
                f"expected {self.expected[self.first_divergence] if self.first_divergence is not None and self.first_divergence < len(self.expected) else None}, "
                f"got {self.got[self.first_divergence] if self.first_divergence is not None and self.first_divergence < len(self.got) else None}")


def replay(record: SessionRecord, scenario: Scenario,
           models: dict | None = None, model_hashes: dict | None = None,
           max_seconds: float = 600.0) -> ReplayReport:
    """Re-run a record's commands at their recorded ticks and compare
    transition sequences bit for bit."""
    if scenario.canonical_hash() != record.scenario_hash:
        raise ValueError("scenario does not match the record's scenario hash")
    if (model_hashes or {}) != (record.monitor_models or {}):
        raise ValueError("monitor models do not match the record")

    system = FeedingSystem(scenario, seed=record.seed, models=models,
                           model_hashes=model_hashes)
    # monitor-sourced stops regenerate from detection; only re-issue the rest
    pending = [(e.tick, e.data) for e in record.commands()
               if e.data.get("source") != "monitor"]
    pending.sort(key=lambda x: x[0])
    last_tick = pending[-1][0] if pending else 0

    while True:
        while pending and pending[0][0] <= system.world.tick:
            _, data = pending.pop(0)
            system.post(Command(kind=data["command"], source=data["source"],
                                direction=data.get("direction"),
                                label=data.get("label")))
        system.tick()
        done = (not pending and not system.inbox
                and system.task.state == TaskState.IDLE
                and system.task._activity is None
                and system.world.tick > last_tick)
        if done or system.world.time >= max_seconds:
            break

    expected = transition_signature(record.events)
    got = transition_signature(system.log.events)
    if expected == got:
        return ReplayReport(match=True, expected=expected, got=got)
    div = next((i for i, (a, b) in enumerate(zip(expected, got)) if a != b),
               min(len(expected), len(got)))
    return ReplayReport(match=False, expected=expected, got=got,
                        first_divergence=div)


def script_subtasks_succeeded(record: SessionRecord) -> bool:
    """True when every scripted subtask command led to a successful outcome."""
    subtask_cmds = [e for e in record.commands()
                    if e.data["command"] in ("scoop", "wipe", "feed", "dry_run")]
    outcomes = [e for e in record.events
                if e.kind == "outcome" and e.data["subtask"] != "abort"]
    if len(outcomes) < len(subtask_cmds):
        return False
    return all(o.data.get("success") for o in outcomes)
