"""Append-only session records: commands, transitions, outcomes, anomalies,
feedback labels.  Records are line-delimited JSON and replayable: given the
same scenario, seed, and command ticks, a re-run reproduces the transition
sequence bit for bit.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field


@dataclass(frozen=True)
class Event:
    tick: int
    t: float
    kind: str          # command | decision | transition | outcome | anomaly |
    data: dict         # feedback | estimate | note

    def to_json(self) -> dict:
        return {"tick": self.tick, "t": self.t, "kind": self.kind, "data": self.data}

    @staticmethod
    def from_json(d: dict) -> "Event":
        return Event(tick=int(d["tick"]), t=float(d["t"]), kind=d["kind"],
                     data=d["data"])


class SessionLog:
    def __init__(self):
        self.events: list[Event] = []

    def append(self, tick: int, t: float, kind: str, **data) -> Event:
        ev = Event(tick=tick, t=t, kind=kind, data=data)
        self.events.append(ev)
        return ev

    def of_kind(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]


def transition_signature(events: list[Event]) -> list[tuple]:
    """Canonical transition sequence used for replay comparison."""
    return [(e.tick, e.data["from"], e.data["to"], e.data["trigger"], e.data["source"])
            for e in events if e.kind == "transition"]


def summarize(events: list[Event]) -> dict:
    """Summary metrics derived purely from raw events."""
    outcomes = [e for e in events if e.kind == "outcome"]
    success = {}
    attempts = {}
    durations = {}
    for e in outcomes:
        sub = e.data["subtask"]
        attempts[sub] = attempts.get(sub, 0) + 1
        if e.data.get("success"):
            success[sub] = success.get(sub, 0) + 1
        durations.setdefault(sub, []).append(e.t - e.data["started_t"])

    # one feeding cycle = a successful scoop followed by the next successful
    # delivery; the cycle duration is the active time of the two subtasks
    cycles = []
    last_scoop = None
    for e in outcomes:
        if e.data["subtask"] == "scoop" and e.data.get("success"):
            last_scoop = e.t - e.data["started_t"]
        elif e.data["subtask"] == "deliver" and e.data.get("success") and last_scoop:
            cycles.append(last_scoop + (e.t - e.data["started_t"]))
            last_scoop = None

    return {
        "attempts": attempts,
        "successes": success,
        "subtask_durations": durations,
        "cycle_durations": cycles,
        "anomalies": sum(1 for e in events if e.kind == "anomaly"),
        "feedback": {lbl: sum(1 for e in events if e.kind == "feedback"
                              and e.data.get("label") == lbl)
                     for lbl in ("success", "failure", "unlabeled")},
    }


@dataclass
class SessionRecord:
    scenario_hash: str
    seed: int
    events: list[Event] = field(default_factory=list)
    session_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    monitor_models: dict = field(default_factory=dict)   # model name -> sha256

    def summary(self) -> dict:
        return summarize(self.events)

    def commands(self) -> list[Event]:
        return [e for e in self.events if e.kind == "command"]

    def transitions(self) -> list[tuple]:
        return transition_signature(self.events)

    def save(self, path):
        with open(path, "w") as f:
            header = {"record": "feedsim-session", "version": 1,
                      "session_id": self.session_id,
                      "scenario_hash": self.scenario_hash, "seed": self.seed,
                      "monitor_models": self.monitor_models}
            f.write(json.dumps(header) + "\n")
            for ev in self.events:
                f.write(json.dumps(ev.to_json()) + "\n")
            f.write(json.dumps({"kind": "summary", "data": self.summary()}) + "\n")

    @staticmethod
    def load(path) -> "SessionRecord":
        with open(path) as f:
            lines = [json.loads(line) for line in f if line.strip()]
        if not lines or lines[0].get("record") != "feedsim-session":
            raise ValueError(f"{path} is not a session record")
        header = lines[0]
        events = [Event.from_json(d) for d in lines[1:] if d.get("kind") != "summary"]
        return SessionRecord(scenario_hash=header["scenario_hash"],
                             seed=int(header["seed"]), events=events,
                             session_id=header["session_id"],
                             monitor_models=header.get("monitor_models", {}))
