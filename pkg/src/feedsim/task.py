"""Finite-state task executive: sequences scooping/stabbing, wiping, and
delivery as motion-primitive scripts, handles normal (T_N) and anomalous
(T_A) transitions, delivery calibration, and level-utensil abort returns.

Subtasks run as generators advanced one 1 kHz tick at a time, so a Stop (or
a monitor anomaly) takes effect between any two ticks: the running activity
is dropped and an AbortReturn activity replaces it on the same tick.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .control import IkError, MotionKind, MotionPrimitive
from .geometry import PoseSE3, UnitQuaternion
from .perception import NoFoodError, select_scoop_site
from .session import SessionLog


class TaskState(str, Enum):
    IDLE = "Idle"
    INIT_SCOOP = "InitScoop"
    ESTIMATE_FOOD = "EstimateFood"
    SCOOP = "Scoop"
    INIT_WIPE = "InitWipe"
    WIPE = "Wipe"
    INIT_DELIVER = "InitDeliver"
    ESTIMATE_MOUTH = "EstimateMouth"
    DELIVER = "Deliver"
    TILT_RETRACT = "TiltAndRetract"
    ABORT_RETURN = "AbortReturn"


COMMAND_KINDS = ("scoop", "wipe", "feed", "stop", "calibrate", "feedback",
                 "re_estimate_mouth", "dry_run")


@dataclass(frozen=True)
class Command:
    kind: str
    source: str = "cli"            # ui | cli | monitor
    direction: str | None = None   # calibrate
    label: str | None = None       # feedback

    def __post_init__(self):
        if self.kind not in COMMAND_KINDS:
            raise ValueError(f"unknown command kind {self.kind!r}")


@dataclass(frozen=True)
class Decision:
    accepted: bool
    reason: str = ""
    transition: str | None = None   # T_N | T_A


# calibration arrows move the delivery point in the mouth frame:
# left/right = +/-x, up/down = +/-y, in/out = -/+z (z points out of the face)
CALIBRATION_DIRECTIONS = {
    "left": (0, +1), "right": (0, -1),
    "up": (1, +1), "down": (1, -1),
    "in": (2, -1), "out": (2, +1),
}

CALIBRATION_STEP_M = 0.01
CALIBRATION_MAX_STEPS = 5


@dataclass(frozen=True)
class DeliveryCalibration:
    """Operator offset from the default delivery point, in 1 cm steps."""

    steps: tuple = (0, 0, 0)

    @property
    def offset(self) -> np.ndarray:
        return CALIBRATION_STEP_M * np.array(self.steps, dtype=float)

    def apply(self, direction: str) -> "DeliveryCalibration":
        if direction not in CALIBRATION_DIRECTIONS:
            raise ValueError(f"unknown calibration direction {direction!r}")
        axis, sign = CALIBRATION_DIRECTIONS[direction]
        steps = list(self.steps)
        steps[axis] = max(-CALIBRATION_MAX_STEPS,
                          min(CALIBRATION_MAX_STEPS, steps[axis] + sign))
        return DeliveryCalibration(steps=tuple(steps))

    def save(self, path):
        Path(path).write_text(json.dumps({"steps": list(self.steps)}))

    @staticmethod
    def load(path) -> "DeliveryCalibration":
        p = Path(path)
        if not p.exists():
            return DeliveryCalibration()
        return DeliveryCalibration(steps=tuple(json.loads(p.read_text())["steps"]))


class PrimitiveScripts:
    """Waypoint scripts, one list per subtask per utensil kind."""

    def __init__(self, doc: dict):
        if doc.get("version") != 1:
            raise ValueError("primitives version must be 1")
        self.doc = doc

    @staticmethod
    def load(path=None) -> "PrimitiveScripts":
        if path is None:
            text = resources.files("feedsim.data").joinpath("primitives.yaml").read_text()
        else:
            text = Path(path).read_text()
        return PrimitiveScripts(yaml.safe_load(text))

    def init_pose(self, subtask: str) -> dict:
        return self.doc["init_poses"][subtask]

    def waypoints(self, subtask: str, utensil_kind: str) -> list[dict]:
        table = self.doc["subtasks"][subtask]
        return table.get(utensil_kind) or table["any"]

    @property
    def estimate_hold_s(self) -> float:
        return float(self.doc.get("estimate_hold_s", 0.3))

    def expected_duration(self, subtask: str, utensil_kind: str) -> float:
        dur = self.init_pose(subtask)["duration"]
        if subtask == "scoop":
            dur += self.estimate_hold_s
        if subtask == "deliver":
            dur += 2.5   # registration + estimate allowance
        dur += sum(w["duration"] for w in self.waypoints(subtask, utensil_kind))
        return dur


def _frame_axes(x, up=(0.0, 0.0, 1.0)) -> UnitQuaternion:
    x = np.asarray(x, dtype=float)
    x = x / np.linalg.norm(x)
    z = np.asarray(up, dtype=float)
    z = z - (z @ x) * x
    z = z / np.linalg.norm(z)
    return UnitQuaternion.from_matrix(np.stack([x, np.cross(z, x), z], axis=1))


def waypoint_primitive(wp: dict, frame: PoseSE3, calib_offset=None,
                       duration_scale: float = 1.0) -> MotionPrimitive:
    """Resolve a scripted waypoint into a world-frame motion primitive."""
    pos = np.array(wp["pos"], dtype=float)
    if wp.get("calibrated") and calib_offset is not None:
        pos = pos + np.asarray(calib_offset, dtype=float)
    rpy = np.deg2rad(np.asarray(wp.get("rpy_deg", [0, 0, 0]), dtype=float))
    q = UnitQuaternion.from_rpy(*rpy)
    tilt = float(wp.get("tilt_deg", 0.0))
    if tilt:
        q = q.compose(UnitQuaternion.from_axis_angle([0, 1, 0], np.deg2rad(tilt)))
    goal = frame.compose(PoseSE3(pos, q))
    return MotionPrimitive(goal=goal, duration=float(wp["duration"]) * duration_scale,
                           kind=MotionKind(wp["kind"]))


def level_orientation(tip_R: np.ndarray) -> UnitQuaternion:
    """Level (z up) orientation keeping the current horizontal heading."""
    x = tip_R[:, 0].copy()
    x[2] = 0.0
    if np.linalg.norm(x) < 0.1:
        x = tip_R[:, 1].copy()
        x[2] = 0.0
    return _frame_axes(x)


class TaskManager:
    """Single owner of task state; commands arrive through one ordered inbox."""

    MONITORED_SUBTASKS = ("scoop", "deliver")

    def __init__(self, world, controller, tracker, log: SessionLog,
                 scripts: PrimitiveScripts | None = None,
                 calibration_path=None):
        self.world = world
        self.ctl = controller
        self.tracker = tracker
        self.log = log
        self.scripts = scripts or PrimitiveScripts.load()
        self.calibration_path = calibration_path
        self.calibration = (DeliveryCalibration.load(calibration_path)
                            if calibration_path else DeliveryCalibration())

        self.state = TaskState.IDLE
        self.active_subtask: str | None = None
        self.dry_run = False
        self._activity = None
        self._hold_theta = world.theta.copy()
        self._force_fresh_estimate = False
        self._abort_target: np.ndarray | None = None
        self._subtask_started_t = 0.0
        self._expected_duration = 1.0
        self.execution_index = 0
        self.last_outcome_index: int | None = None
        self.last_reports: dict = {}
        self.banner = "Idle: waiting for a command"

        cfg = world.scenario.perception
        self.reuse_s = float(cfg.get("reuse_s", 60.0))
        self.lm_noise = float(cfg.get("noise_sigma", 0.0))
        self.lm_outlier = float(cfg.get("outlier_prob", 0.0))
        self.cloud_noise = float(cfg.get("cloud_noise_sigma", 0.001))
        self.estimate_timeout_s = 3.0
        self.duration_scale = world.scenario.duration_scale

    # ------------------------------------------------------------- frames

    def _scene_frames(self) -> dict[str, PoseSE3]:
        bowl = self.world.bowl.center
        radial = np.array([bowl[0], bowl[1], 0.0])
        q_radial = _frame_axes(radial)
        bar0, bar1 = self.world.bar_start, self.world.bar_end
        return {
            "world": PoseSE3.identity(),
            "bowl": PoseSE3(bowl.copy(), q_radial),
            "bar": PoseSE3(bar0.copy(), _frame_axes(bar1 - bar0)),
            "mouth_nominal": self.world.scenario.mouth_pose,
        }

    def progress(self) -> float:
        if self.active_subtask is None:
            return 0.0
        el = self.world.time - self._subtask_started_t
        return float(min(1.0, max(0.0, el / self._expected_duration)))

    @property
    def monitored(self) -> bool:
        return (self.active_subtask in self.MONITORED_SUBTASKS
                and self.state != TaskState.ABORT_RETURN)

    # ------------------------------------------------------------ commands

    def handle_command(self, cmd: Command) -> Decision:
        decision = self._decide(cmd)
        self.log.append(self.world.tick, self.world.time, "decision",
                        command=cmd.kind, source=cmd.source,
                        accepted=decision.accepted, reason=decision.reason,
                        transition=decision.transition, state=self.state.value)
        return decision

    def _decide(self, cmd: Command) -> Decision:
        if cmd.kind == "stop":
            if self.state == TaskState.IDLE:
                return Decision(True, "stop in Idle is a no-op")
            if self.state == TaskState.ABORT_RETURN:
                return Decision(True, "already returning")
            self._begin_abort(cmd.source)
            return Decision(True, "anomalous-event transition", "T_A")

        if cmd.kind == "feedback":
            label = cmd.label or "unlabeled"
            if self.last_outcome_index is None:
                return Decision(False, "no execution to label")
            self.log.append(self.world.tick, self.world.time, "feedback",
                            execution=self.last_outcome_index, label=label,
                            source=cmd.source)
            return Decision(True, f"labeled execution {self.last_outcome_index}")

        if cmd.kind == "calibrate":
            if self.state != TaskState.IDLE:
                return Decision(False, f"busy: {self.state.value}")
            try:
                self.calibration = self.calibration.apply(cmd.direction)
            except ValueError as e:
                return Decision(False, str(e))
            if self.calibration_path:
                self.calibration.save(self.calibration_path)
            self.log.append(self.world.tick, self.world.time, "calibration",
                            direction=cmd.direction, steps=list(self.calibration.steps),
                            source=cmd.source)
            return Decision(True, f"offset now {self.calibration.steps}")

        if cmd.kind == "re_estimate_mouth":
            if self.state != TaskState.IDLE:
                return Decision(False, f"busy: {self.state.value}")
            self._force_fresh_estimate = True
            return Decision(True, "next delivery re-estimates the mouth pose")

        if self.state != TaskState.IDLE:
            return Decision(False, f"busy: {self.state.value}")

        if cmd.kind == "scoop":
            self._activity = self._subtask_scoop(cmd.source)
            return Decision(True, "scoop started", "T_N")
        if cmd.kind == "wipe":
            if self.world.utensil.kind != "spoon":
                return Decision(False, "wiping requires a spoon utensil")
            self._activity = self._subtask_wipe(cmd.source)
            return Decision(True, "wipe started", "T_N")
        if cmd.kind in ("feed", "dry_run"):
            self._activity = self._subtask_deliver(cmd.source,
                                                   dry_run=cmd.kind == "dry_run")
            return Decision(True, f"{cmd.kind} started", "T_N")
        return Decision(False, f"command {cmd.kind!r} not applicable")

    # ---------------------------------------------------------------- tick

    def tick(self):
        """Advance one 1 kHz tick; returns the world SensorFrame."""
        if self._activity is None:
            return self.world.idle_hold_step()
        try:
            next(self._activity)
        except StopIteration:
            self._activity = None
        return self.world.last_frame

    # ---------------------------------------------------------- transitions

    def _transition(self, new_state: TaskState, trigger: str, source: str):
        old = self.state
        self.state = new_state
        self.banner = f"{new_state.value} ({trigger})"
        self.log.append(self.world.tick, self.world.time, "transition",
                        **{"from": old.value, "to": new_state.value,
                           "trigger": trigger, "source": source})

    def _begin_subtask(self, name: str, source: str):
        self.active_subtask = name
        self._subtask_started_t = self.world.time
        self._expected_duration = (self.scripts.expected_duration(
            name, self.world.utensil.kind) * self.duration_scale + 2.0)
        self.execution_index += 1
        self.last_reports = {}
        return self.execution_index, self.world.time

    def _finish_subtask(self, index: int, started_t: float, source: str,
                        success: bool, reason: str, **extra):
        self.log.append(self.world.tick, self.world.time, "outcome",
                        execution=index, subtask=self.active_subtask,
                        success=success, reason=reason, started_t=started_t,
                        source=source, **extra)
        self.last_outcome_index = index
        self.active_subtask = None
        self.dry_run = False
        self._transition(TaskState.IDLE, "T_N", source)

    # ----------------------------------------------------------- primitives

    def _track_prim(self, name: str, prim: MotionPrimitive):
        traj = self.ctl.plan(prim)
        report = yield from self.ctl.track(traj)
        self._hold_theta = self.world.theta.copy()
        self.last_reports[name] = report
        self.log.append(self.world.tick, self.world.time, "report",
                        primitive=name, motion_kind=prim.kind.value,
                        success=report.success, timed_out=report.timed_out,
                        duration=round(report.duration, 4),
                        final_pos_err_m=round(report.final_pos_err, 6),
                        final_ori_err_rad=round(report.final_ori_err, 6),
                        max_dtheta=round(report.max_dtheta, 6))
        return report

    def _hold(self, seconds: float):
        for _ in range(int(round(seconds * 1000))):
            self.ctl.hold_tick(self._hold_theta)
            yield

    def _return_to_init(self, target_pos):
        """Level Cartesian return used by failures inside a subtask."""
        q = level_orientation(self.world._tip_R)
        dist = float(np.linalg.norm(target_pos - self.world.tip_position()))
        prim = MotionPrimitive(goal=PoseSE3(np.asarray(target_pos, float), q),
                               duration=max(1.0, dist / 0.06),
                               kind=MotionKind.CARTESIAN_PTP)
        report = yield from self._track_prim("return_to_init", prim)
        return report

    # -------------------------------------------------------------- scoop

    def _subtask_scoop(self, source: str):
        index, started_t = self._begin_subtask("scoop", source)
        frames = self._scene_frames()
        init_wp = self.scripts.init_pose("scoop")
        init_prim = waypoint_primitive(init_wp, frames[init_wp["frame"]],
                                       duration_scale=self.duration_scale)
        self._abort_target = init_prim.goal.position.copy()
        self._transition(TaskState.INIT_SCOOP, "T_N", source)
        try:
            report = yield from self._track_prim("init", init_prim)
        except IkError as e:
            self._finish_subtask(index, started_t, source, False, f"planning: {e}")
            return
        if not report.success:
            self._finish_subtask(index, started_t, source, False, "init timeout")
            return

        self._transition(TaskState.ESTIMATE_FOOD, "T_N", source)
        yield from self._hold(self.scripts.estimate_hold_s)
        cloud = self.world.render_food_cloud(self.cloud_noise)
        try:
            site = select_scoop_site(cloud)
        except NoFoodError as e:
            self._finish_subtask(index, started_t, source, False, f"no food: {e}")
            return
        self.log.append(self.world.tick, self.world.time, "estimate",
                        estimator="food_site", site=[float(v) for v in site],
                        points=int(len(cloud.points)))

        frames["site"] = PoseSE3(site, frames["bowl"].orientation)
        self._transition(TaskState.SCOOP, "T_N", source)
        grams = 0.0
        for wp in self.scripts.waypoints("scoop", self.world.utensil.kind):
            prim = waypoint_primitive(wp, frames[wp["frame"]],
                                      duration_scale=self.duration_scale)
            report = yield from self._track_prim(wp["name"], prim)
            if not report.success:
                yield from self._return_to_init(self._abort_target)
                self._finish_subtask(index, started_t, source, False,
                                     f"timeout at {wp['name']}")
                return
            if wp.get("effect") == "scoop":
                grams = self.world.scoop_effect(site)
        self._finish_subtask(index, started_t, source, True, "scooped",
                             grams=round(grams, 6),
                             site=[float(v) for v in site])

    # --------------------------------------------------------------- wipe

    def _subtask_wipe(self, source: str):
        index, started_t = self._begin_subtask("wipe", source)
        frames = self._scene_frames()
        init_wp = self.scripts.init_pose("wipe")
        init_prim = waypoint_primitive(init_wp, frames[init_wp["frame"]],
                                       duration_scale=self.duration_scale)
        self._abort_target = init_prim.goal.position.copy()
        self._transition(TaskState.INIT_WIPE, "T_N", source)
        try:
            report = yield from self._track_prim("init", init_prim)
        except IkError as e:
            self._finish_subtask(index, started_t, source, False, f"planning: {e}")
            return
        if not report.success:
            self._finish_subtask(index, started_t, source, False, "init timeout")
            return

        self._transition(TaskState.WIPE, "T_N", source)
        cleared = 0.0
        bar_dev = 0.0
        drag_start = None
        for wp in self.scripts.waypoints("wipe", self.world.utensil.kind):
            prim = waypoint_primitive(wp, frames[wp["frame"]],
                                      duration_scale=self.duration_scale)
            report = yield from self._track_prim(wp["name"], prim)
            if not report.success:
                yield from self._return_to_init(self._abort_target)
                self._finish_subtask(index, started_t, source, False,
                                     f"timeout at {wp['name']}")
                return
            if wp["name"] == "touch":
                drag_start = prim.goal.position.copy()
            if wp["name"] == "drag" and drag_start is not None:
                # deviation from the bar-parallel drag segment (the planned
                # linear trajectory riding the top of the bar)
                devs = [_seg_distance(p, drag_start, prim.goal.position)
                        for _, p, _ in report.samples]
                bar_dev = float(max(devs)) if devs else 0.0
            if wp.get("effect") == "wipe":
                cleared = self.world.wipe_effect()
        self._finish_subtask(index, started_t, source, True, "wiped",
                             cleared_g=round(cleared, 6), bar_deviation_m=bar_dev)

    # ------------------------------------------------------------- deliver

    def _subtask_deliver(self, source: str, dry_run: bool):
        index, started_t = self._begin_subtask("deliver", source)
        self.dry_run = dry_run
        frames = self._scene_frames()
        init_wp = self.scripts.init_pose("deliver")
        init_prim = waypoint_primitive(init_wp, frames[init_wp["frame"]],
                                       duration_scale=self.duration_scale)
        self._abort_target = init_prim.goal.position.copy()
        self._transition(TaskState.INIT_DELIVER, "T_N", source)
        try:
            report = yield from self._track_prim("init", init_prim)
        except IkError as e:
            self._finish_subtask(index, started_t, source, False, f"planning: {e}")
            return
        if not report.success:
            self._finish_subtask(index, started_t, source, False, "init timeout")
            return

        self._transition(TaskState.ESTIMATE_MOUTH, "T_N", source)
        est = yield from self._obtain_estimate()
        if est is None:
            yield from self._return_to_init(self._abort_target)
            self._finish_subtask(index, started_t, source, False,
                                 "no valid mouth estimate within timeout")
            return

        frames["mouth"] = est.pose
        planned_insert = None
        self._transition(TaskState.DELIVER, "T_N", source)
        achieved_err = None
        for wp in self.scripts.waypoints("deliver", self.world.utensil.kind):
            if wp["name"] in ("tilt", "retract"):
                break
            prim = waypoint_primitive(wp, frames[wp["frame"]],
                                      self.calibration.offset,
                                      duration_scale=self.duration_scale)
            if wp["name"] == "insert":
                planned_insert = prim.goal.position.copy()
            report = yield from self._track_prim(wp["name"], prim)
            if not report.success:
                yield from self._return_to_init(self._abort_target)
                self._finish_subtask(index, started_t, source, False,
                                     f"timeout at {wp['name']}")
                return
        achieved_insert = self.world.tip_position()
        achieved_err = float(np.linalg.norm(achieved_insert - planned_insert))
        insert_ok = achieved_err <= 0.01

        self._transition(TaskState.TILT_RETRACT, "T_N", source)
        eaten = 0.0
        for wp in self.scripts.waypoints("deliver", self.world.utensil.kind):
            if wp["name"] not in ("tilt", "retract"):
                continue
            if not insert_ok and wp["name"] == "tilt":
                continue   # do not feed off-target; retract instead
            prim = waypoint_primitive(wp, frames[wp["frame"]],
                                      self.calibration.offset,
                                      duration_scale=self.duration_scale)
            report = yield from self._track_prim(wp["name"], prim)
            if wp.get("effect") == "transfer" and report.success and not dry_run:
                eaten = self.world.transfer_to_mouth()
        self._finish_subtask(index, started_t, source, insert_ok,
                             "delivered" if insert_ok else
                             f"insert error {achieved_err * 1000:.1f} mm",
                             achieved_err_m=achieved_err, eaten_g=round(eaten, 6),
                             dry_run=dry_run,
                             planned_insert=[float(v) for v in planned_insert],
                             achieved_insert=[float(v) for v in achieved_insert])

    def _obtain_estimate(self):
        stored = self.tracker.last_estimate
        now = self.world.time
        if (stored is not None and not self._force_fresh_estimate
                and now - stored.timestamp <= self.reuse_s):
            self.log.append(self.world.tick, now, "estimate", estimator="mouth",
                            reused=True, confidence=stored.confidence,
                            open=stored.open_flag)
            return stored
        self._force_fresh_estimate = False
        t0 = now
        while self.world.time - t0 < self.estimate_timeout_s:
            if self.world.landmarks_due():
                frame = self.world.emit_landmarks(self.lm_noise, self.lm_outlier)
                if frame is not None:
                    est = self.tracker.ingest(frame)
                    self.log.append(self.world.tick, self.world.time, "estimate",
                                    estimator="mouth", reused=False,
                                    visible=int(frame.visible.sum()),
                                    formed=est is not None,
                                    registered=self.tracker.registered)
                    if est is not None:
                        return est
            self.ctl.hold_tick(self._hold_theta)
            yield
        return None

    # --------------------------------------------------------------- abort

    def _begin_abort(self, source: str):
        if self._activity is not None:
            self._activity.close()
        aborted = self.active_subtask
        self._transition(TaskState.ABORT_RETURN, "T_A", source)
        self._activity = self._subtask_abort(source, aborted)

    def _subtask_abort(self, source: str, aborted_subtask: str | None):
        started_t = self.world.time
        index = self.execution_index
        target = self._abort_target
        if target is None:
            target = self.world.tip_position()
        spill_before = self.world.spilled_g

        # phase A: level the utensil in place if the interrupt left it tilted
        tilt0 = self.world.tip_tilt_deg()
        if tilt0 > 1.0:
            q = level_orientation(self.world._tip_R)
            prim = MotionPrimitive(goal=PoseSE3(self.world.tip_position(), q),
                                   duration=max(0.6, tilt0 / 30.0),
                                   kind=MotionKind.CARTESIAN_PTP)
            yield from self._track_prim("abort_level", prim)

        # phase B: the returning motion proper, level orientation throughout
        q = level_orientation(self.world._tip_R)
        dist = float(np.linalg.norm(target - self.world.tip_position()))
        prim = MotionPrimitive(goal=PoseSE3(np.asarray(target, float), q),
                               duration=max(1.2, dist / 0.05),
                               kind=MotionKind.CARTESIAN_PTP)
        report = yield from self._track_prim("abort_return", prim)
        if not report.success:
            # fallback: joint-space retreat to the same pose
            self.log.append(self.world.tick, self.world.time, "note",
                            text="abort return timed out; joint-space retreat")
            try:
                prim = MotionPrimitive(goal=prim.goal, duration=2.0,
                                       kind=MotionKind.JOINT_PTP)
                report = yield from self._track_prim("abort_retreat", prim)
            except IkError:
                pass

        max_tilt = max((tl for _, _, tl in report.samples), default=0.0)
        self.log.append(self.world.tick, self.world.time, "outcome",
                        execution=index, subtask="abort", success=True,
                        reason=f"aborted {aborted_subtask or 'idle'}",
                        started_t=started_t, source=source,
                        aborted_subtask=aborted_subtask,
                        return_max_tilt_deg=float(max_tilt),
                        spilled_g=float(self.world.spilled_g - spill_before))
        self.last_outcome_index = index
        self.active_subtask = None
        self.dry_run = False
        self._transition(TaskState.IDLE, "T_N", source)


def _seg_distance(p, a, b) -> float:
    ab = b - a
    t = float(np.clip((np.asarray(p) - a) @ ab / (ab @ ab), 0.0, 1.0))
    return float(np.linalg.norm(np.asarray(p) - (a + t * ab)))
