"""Operator bridge: JSON-over-WebSocket protocol plus static UI hosting.

Network I/O is isolated from the simulation loop: the sim advances in its own
thread and publishes events/scene snapshots into per-client outboxes via the
server event loop.  Commands flow the other way through the system inbox.
State transitions and command replies are never dropped; stale scene frames
are (latest-only slot per client).

Wire format: each WebSocket text frame carries exactly one JSON object.  See
docs/protocol.md for the schema (version feedsim-protocol/1).
"""

from __future__ import annotations

import asyncio
import json
import threading
import time
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse, RedirectResponse
from fastapi.staticfiles import StaticFiles

from .session import Event
from .task import CALIBRATION_DIRECTIONS, Command
from .system import FeedingSystem

PROTOCOL_VERSION = "feedsim-protocol/1"

UI_COMMANDS = ("scoop", "wipe", "feed", "stop", "dry_run", "re_estimate_mouth",
               "feedback")

SCENE_PERIOD_TICKS = 100   # 10 Hz scene stream


class SimRunner(threading.Thread):
    """Advances the system in simulated time, optionally paced to wall time."""

    def __init__(self, system: FeedingSystem, speed: float = 1.0):
        super().__init__(daemon=True)
        self.system = system
        self.speed = float(speed)   # sim seconds per wall second; 0 = unpaced
        self.lock = threading.Lock()
        self._halt = threading.Event()
        self.on_scene = None        # callable(snapshot dict)

    def post(self, cmd: Command):
        with self.lock:
            self.system.post(cmd)

    def run(self):
        t_wall0 = time.monotonic()
        t_sim0 = self.system.world.time
        while not self._halt.is_set():
            with self.lock:
                self.system.tick()
                tick = self.system.world.tick
                scene = (self.system.scene_snapshot()
                         if tick % SCENE_PERIOD_TICKS == 0 else None)
            if scene is not None and self.on_scene is not None:
                self.on_scene(scene)
            if self.speed > 0:
                target = t_wall0 + (self.system.world.time - t_sim0) / self.speed
                delay = target - time.monotonic()
                if delay > 0:
                    time.sleep(min(delay, 0.05))

    def stop(self):
        self._halt.set()


class ClientBox:
    """Per-connection outbox: unbounded critical lane + latest-scene slot."""

    def __init__(self, loop: asyncio.AbstractEventLoop):
        self.loop = loop
        self.critical: list[dict] = []
        self.scene: dict | None = None
        self.wakeup = asyncio.Event()
        self.seq = 0

    def push_critical(self, msg: dict):
        self.critical.append(msg)
        self.wakeup.set()

    def push_scene(self, msg: dict):
        self.scene = msg          # replaces any stale frame
        self.wakeup.set()

    def pop(self) -> dict | None:
        if self.critical:
            return self.critical.pop(0)
        if self.scene is not None:
            msg, self.scene = self.scene, None
            return msg
        return None


def build_app(runner: SimRunner, ui_dir=None) -> FastAPI:
    app = FastAPI(title="feedsim bridge")
    clients: set[ClientBox] = set()
    clients_lock = threading.Lock()

    def broadcast(msg: dict, critical: bool = True):
        with clients_lock:
            boxes = list(clients)
        for box in boxes:
            push = box.push_critical if critical else box.push_scene
            box.loop.call_soon_threadsafe(push, msg)

    def on_event(ev: Event):
        msg = _event_message(ev, runner.system)
        if msg is not None:
            broadcast(msg)

    runner.system.listeners.append(on_event)
    runner.on_scene = lambda snap: broadcast({"type": "scene", "payload": snap},
                                             critical=False)

    @app.on_event("shutdown")
    def _shutdown():
        runner.stop()

    @app.get("/")
    def index():
        if ui_dir is not None:
            return RedirectResponse("/ui/")
        return HTMLResponse("<h1>feedsim bridge</h1><p>WebSocket at /ws</p>")

    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        loop = asyncio.get_running_loop()
        box = ClientBox(loop)
        with clients_lock:
            clients.add(box)
        system = runner.system
        with runner.lock:
            hello = {"type": "state", "payload": _state_payload(system)}
            hello["payload"]["protocol"] = PROTOCOL_VERSION
            hello["payload"]["scene_static"] = system.scene_static()
            scene = {"type": "scene", "payload": system.scene_snapshot()}
        box.push_critical(hello)
        box.push_scene(scene)

        async def sender():
            while True:
                msg = box.pop()
                if msg is None:
                    await box.wakeup.wait()
                    box.wakeup.clear()
                    continue
                box.seq += 1
                msg["seq"] = box.seq
                msg.setdefault("t", runner.system.world.time)
                await ws.send_text(json.dumps(msg))

        send_task = asyncio.create_task(sender())
        try:
            while True:
                raw = await ws.receive_text()
                reply = _handle_client_message(raw, runner)
                if reply is not None:
                    box.push_critical(reply)
        except WebSocketDisconnect:
            pass
        finally:
            send_task.cancel()
            with clients_lock:
                clients.discard(box)

    return app


def _state_payload(system: FeedingSystem) -> dict:
    task = system.task
    return {
        "state": task.state.value,
        "banner": task.banner,
        "buttons_enabled": task.state.value == "Idle",
        "active_subtask": task.active_subtask,
        "calibration_steps": list(task.calibration.steps),
        "mouth_open": bool(system.world.mouth_open),
    }


def _event_message(ev: Event, system: FeedingSystem) -> dict | None:
    if ev.kind == "transition":
        payload = _state_payload(system)
        payload["transition"] = ev.data
        return {"type": "state", "payload": payload, "t": ev.t}
    if ev.kind == "estimate":
        return {"type": "estimate", "payload": dict(ev.data), "t": ev.t}
    if ev.kind == "calibration":
        return {"type": "calibration",
                "payload": {"steps": ev.data["steps"],
                            "offset_m": [s * 0.01 for s in ev.data["steps"]]},
                "t": ev.t}
    if ev.kind == "outcome":
        return {"type": "feedback_request",
                "payload": {"execution": ev.data["execution"],
                            "subtask": ev.data["subtask"],
                            "success": ev.data.get("success"),
                            "reason": ev.data.get("reason")},
                "t": ev.t}
    if ev.kind == "decision" and not ev.data.get("accepted"):
        return {"type": "error",
                "payload": {"reason": f"command rejected: {ev.data.get('reason')}",
                            "command": ev.data.get("command")},
                "t": ev.t}
    return None


def _handle_client_message(raw: str, runner: SimRunner) -> dict | None:
    try:
        msg = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError):
        return {"type": "error", "payload": {"reason": "malformed JSON"}}
    if not isinstance(msg, dict):
        return {"type": "error", "payload": {"reason": "message must be an object"}}
    mtype = msg.get("type")
    payload = msg.get("payload") or {}

    if mtype == "command":
        kind = payload.get("command")
        if kind not in UI_COMMANDS:
            return {"type": "error",
                    "payload": {"reason": f"unknown command {kind!r}"}}
        runner.post(Command(kind=kind, source="ui", label=payload.get("label")))
        return None
    if mtype == "calibration":
        direction = payload.get("direction")
        if direction not in CALIBRATION_DIRECTIONS:
            return {"type": "error",
                    "payload": {"reason": f"unknown direction {direction!r}"}}
        runner.post(Command(kind="calibrate", source="ui", direction=direction))
        return None
    return {"type": "error",
            "payload": {"reason": f"unknown message type {mtype!r}"}}
