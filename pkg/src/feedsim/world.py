"""Kinematic/quasi-dynamic simulation of the arm, bowl, food, and user head.

The plant is a decoupled diagonal-inertia double integrator with viscous
friction and a per-joint gravity torque model, stepped at a fixed 1 kHz by
semi-implicit Euler.  All synthetic sensing originates here: joint encoders,
current proxies, wrist wrench, contact patches, sound energy, food point
clouds, and facial landmark frames.

Determinism contract: identical (scenario, seed, command sequence) produces
bit-identical state trajectories; all randomness flows through one seeded
generator in a fixed call order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import face
from .geometry import PoseSE3, UnitQuaternion
from .scenario import Scenario, cell_centers_1d, valid_cell_mask

DT = 0.001  # fixed simulation step, seconds
LANDMARK_PERIOD_TICKS = 100  # <= 10 Hz landmark stream

CONTACT_PATCHES = ("utensil_bowl", "utensil_bar", "utensil_mouth", "occluder")


@dataclass(frozen=True, eq=False)
class SensorFrame:
    tick: int
    t: float
    theta: np.ndarray
    theta_dot: np.ndarray
    currents: np.ndarray          # A, per joint, = |tau| * k_current
    wrench: np.ndarray            # (6,) wrist force N + torque N m
    contacts: dict
    sound: float                  # RMS proxy, dimensionless

    @property
    def force_mag(self) -> float:
        return float(np.linalg.norm(self.wrench[:3]))

    @property
    def contact_count(self) -> int:
        return int(sum(bool(v) for v in self.contacts.values()))


@dataclass(frozen=True, eq=False)
class FoodCloud:
    points: np.ndarray            # (N, 3) world frame
    bowl_center: np.ndarray       # (3,) world, interior bottom center
    bowl_diameter: float
    guard_height: float = 0.03


@dataclass(frozen=True, eq=False)
class LandmarkFrame:
    tick: int
    t: float
    pixels: np.ndarray            # (68, 2)
    depth: np.ndarray             # (68,)
    visible: np.ndarray           # (68,) bool
    camera_pose: PoseSE3          # world -> camera frame pose

    def lift(self, camera) -> np.ndarray:
        """(68, 3) world-frame points from pixel + per-landmark depth."""
        pts = np.zeros((68, 3))
        for i in range(68):
            p_cam = camera.unproject(self.pixels[i, 0], self.pixels[i, 1], self.depth[i])
            pts[i] = self.camera_pose.transform_point(p_cam)
        return pts


@dataclass
class Fault:
    kind: str                     # force_spike | sound_burst | mouth_occlusion |
    at: float                     # current_surge | contact_flutter
    duration: float = 0.5
    magnitude: float = 20.0

    def active(self, t: float) -> bool:
        return self.at <= t < self.at + self.duration


class World:
    """Owner of all simulated state; stepped by exactly one loop."""

    def __init__(self, scenario: Scenario, seed: int | None = None):
        self.scenario = scenario
        self.arm = scenario.arm
        self.utensil = scenario.utensil
        self.bowl = scenario.bowl
        self.rng = np.random.default_rng(scenario.seed if seed is None else seed)

        sim = scenario.sim
        self.k_current = float(sim.get("k_current", 0.1))
        self.contact_tol = float(sim.get("contact_tol", 0.002))
        self.contact_stiffness = float(sim.get("contact_stiffness", 500.0))
        self.spill_tilt_deg = float(sim.get("spill_tilt_deg", 45.0))
        self.h_per_g = float(sim.get("height_per_gram", 0.0053))
        self.force_noise = float(sim.get("force_noise", 0.05))
        self.torque_noise = float(sim.get("torque_noise", 0.005))
        self.sound_noise = float(sim.get("sound_noise", 0.02))
        self.gravity_on = bool(sim.get("gravity_on", True))

        self.theta = np.array(sim.get("initial_theta",
                                      [-0.3, 0.4, 0.0, 0.9, 0.0, 0.5, 0.0]), dtype=float)
        self.theta_dot = np.zeros(7)
        self.tick = 0
        self.faulted = False

        self.food = scenario.food_grid.copy()
        self._cells_1d = cell_centers_1d(self.bowl)
        self._valid_cells = valid_cell_mask(self.bowl)
        self.utensil_top_g = 0.0
        self.utensil_bottom_g = 0.0
        self.eaten_g = 0.0
        self.spilled_g = 0.0

        self.mouth_pose = scenario.mouth_pose
        self.mouth_open = scenario.mouth_open
        self.bar_start = scenario.bar_start
        self.bar_end = scenario.bar_end

        self.faults: list[Fault] = [Fault(kind=f["type"], at=float(f["at"]),
                                          duration=float(f.get("duration", 0.5)),
                                          magnitude=float(f.get("magnitude", 20.0)))
                                    for f in scenario.faults]

        self._tool_pos = self.utensil.tip_offset.position
        self._tool_rot = self.utensil.tip_offset.orientation.to_matrix()
        self._tip_p, self._tip_R = self.arm.fk_fast(self.theta, self._tool_pos, self._tool_rot)
        self._last_lm_tick = -LANDMARK_PERIOD_TICKS
        self.last_frame = self._make_frame(np.zeros(7))

    # ------------------------------------------------------------------ time

    @property
    def time(self) -> float:
        return self.tick * DT

    # ------------------------------------------------------------------ mass

    @property
    def bowl_total_g(self) -> float:
        return float(self.food.sum())

    @property
    def total_mass_g(self) -> float:
        return (self.bowl_total_g + self.utensil_top_g + self.utensil_bottom_g
                + self.eaten_g + self.spilled_g)

    # ------------------------------------------------------------- kinematics

    def tip_pose(self) -> PoseSE3:
        return PoseSE3(self._tip_p.copy(), UnitQuaternion.from_matrix(self._tip_R))

    def tip_position(self) -> np.ndarray:
        return self._tip_p.copy()

    def tip_tilt_deg(self) -> float:
        """Angle between the utensil z axis and world up."""
        cz = float(np.clip(self._tip_R[2, 2], -1.0, 1.0))
        return float(np.degrees(np.arccos(cz)))

    def tool_jacobian(self) -> np.ndarray:
        return self.arm.jacobian(self.theta, self.utensil.tip_offset)

    def camera_pose(self) -> PoseSE3:
        return self.tip_pose().compose(self.scenario.camera.wrist_offset)

    def gravity(self) -> np.ndarray:
        if not self.gravity_on:
            return np.zeros(7)
        return self.arm.gravity_torque(self.theta)

    # ------------------------------------------------------------------ step

    def step(self, tau) -> SensorFrame:
        """Advance one 1 kHz tick under joint torques tau."""
        tau = np.asarray(tau, dtype=float).reshape(-1)
        if tau.shape != (7,):
            raise ValueError("tau must have 7 entries")
        if not np.all(np.isfinite(tau)):
            # fault event: freeze the plant rather than integrate garbage
            self.faulted = True
            return self.last_frame
        if self.faulted:
            return self.last_frame

        acc = (tau - self.gravity() - self.arm.damping * self.theta_dot) / self.arm.inertia
        self.theta_dot = self.theta_dot + DT * acc
        self.theta = self.theta + DT * self.theta_dot

        low, high = self.arm.lower, self.arm.upper
        below = self.theta < low
        above = self.theta > high
        if below.any() or above.any():
            self.theta = np.clip(self.theta, low, high)
            self.theta_dot[below | above] = 0.0

        self.tick += 1
        self._tip_p, self._tip_R = self.arm.fk_fast(self.theta, self._tool_pos, self._tool_rot)
        self._apply_spill()
        self.last_frame = self._make_frame(tau)
        return self.last_frame

    def idle_hold_step(self) -> SensorFrame:
        """Idle tick: the plant holds position via its counterbalance analogue
        (exact gravity compensation); no controller torque is commanded."""
        return self.step(self.gravity())

    # -------------------------------------------------------------- sensing

    def _active_faults(self, t: float) -> list[Fault]:
        return [f for f in self.faults if f.active(t)]

    def occlusion_active(self) -> bool:
        return any(f.kind == "mouth_occlusion" for f in self._active_faults(self.time))

    def _occluder_center(self) -> np.ndarray:
        # an occluding object sits a hand-width in front of the mouth
        return self.mouth_pose.transform_point([0.0, 0.0, 0.10])

    def _make_frame(self, tau) -> SensorFrame:
        t = self.tick * DT
        contacts = dict.fromkeys(CONTACT_PATCHES, False)
        force = np.zeros(3)

        p = self._tip_p
        # bowl / food surface proximity
        rel = p - self.bowl.center
        r = float(np.hypot(rel[0], rel[1]))
        if r <= self.bowl.radius:
            surface = self.surface_height_at(rel[0], rel[1])
            pen = surface - rel[2]
            if pen > -self.contact_tol:
                contacts["utensil_bowl"] = True
                if pen > 0:
                    force[2] += self.contact_stiffness * min(pen, 0.05)

        # wiping bar proximity
        d_bar = _point_segment_distance(p, self.bar_start, self.bar_end)
        if d_bar <= 0.007 + self.contact_tol:
            contacts["utensil_bar"] = True
            pen = 0.007 - d_bar
            if pen > 0:
                force[2] += self.contact_stiffness * pen

        # mouth plane crossing region
        p_mouth = self.mouth_pose.inverse().transform_point(p)
        if abs(p_mouth[2]) <= 0.01 and np.hypot(p_mouth[0], p_mouth[1]) <= 0.06:
            contacts["utensil_mouth"] = True

        faults = self._active_faults(t)
        for f in faults:
            if f.kind == "mouth_occlusion":
                if np.linalg.norm(p - self._occluder_center()) <= 0.12:
                    contacts["occluder"] = True
                    force[0] += f.magnitude
            elif f.kind == "contact_flutter":
                contacts["utensil_bowl"] = True
                contacts["utensil_bar"] = True

        wrench = np.zeros(6)
        wrench[:3] = force + self.rng.normal(0.0, self.force_noise, size=3)
        wrench[3:] = self.rng.normal(0.0, self.torque_noise, size=3)
        sound = abs(float(self.rng.normal(0.0, self.sound_noise)))
        for f in faults:
            if f.kind == "force_spike":
                wrench[0] += f.magnitude
            elif f.kind == "sound_burst":
                sound += f.magnitude
            elif f.kind == "current_surge":
                tau = tau + f.magnitude / self.k_current / 7.0

        return SensorFrame(
            tick=self.tick, t=t,
            theta=self.theta.copy(), theta_dot=self.theta_dot.copy(),
            currents=self.k_current * np.abs(tau),
            wrench=wrench, contacts=contacts, sound=sound,
        )

    # ----------------------------------------------------------------- food

    def surface_height_at(self, bx: float, by: float) -> float:
        """Food surface height above the bowl bottom at bowl-frame (bx, by)."""
        i = int(np.argmin(np.abs(self._cells_1d - bx)))
        j = int(np.argmin(np.abs(self._cells_1d - by)))
        return float(self.food[i, j] * self.h_per_g)

    def render_food_cloud(self, noise_sigma: float = 0.0) -> FoodCloud:
        """One point per nonempty heightfield cell, at the food surface."""
        pts = []
        n = self.bowl.grid_n
        for i in range(n):
            for j in range(n):
                if self.food[i, j] > 1e-12:
                    pts.append([self.bowl.center[0] + self._cells_1d[i],
                                self.bowl.center[1] + self._cells_1d[j],
                                self.bowl.center[2] + self.food[i, j] * self.h_per_g])
        pts = np.array(pts, dtype=float).reshape(-1, 3)
        if noise_sigma > 0 and len(pts):
            pts = pts + self.rng.normal(0.0, noise_sigma, size=pts.shape)
        return FoodCloud(points=pts, bowl_center=self.bowl.center.copy(),
                         bowl_diameter=self.bowl.diameter,
                         guard_height=self.bowl.guard_height)

    def scoop_effect(self, site) -> float:
        """Remove food around `site` (world frame) onto the utensil.

        Removal is proportional to local mass and capped by utensil capacity,
        so repeated scoops at one spot take progressively less.
        """
        site = np.asarray(site, dtype=float)
        rel = site - self.bowl.center
        if np.hypot(rel[0], rel[1]) > self.bowl.radius:
            return 0.0
        n = self.bowl.grid_n
        take = np.zeros_like(self.food)
        for i in range(n):
            for j in range(n):
                d = np.hypot(self._cells_1d[i] - rel[0], self._cells_1d[j] - rel[1])
                if d <= self.utensil.footprint_m:
                    take[i, j] = 0.5 * self.food[i, j]
        total = take.sum()
        if total <= 0:
            return 0.0
        room = self.utensil.capacity_g - self.utensil_top_g - self.utensil_bottom_g
        if total > room:
            take *= room / total
            total = room
        if total <= 0:
            return 0.0
        self.food -= take
        self.utensil_top_g += 0.85 * total
        self.utensil_bottom_g += 0.15 * total
        return float(total)

    def wipe_effect(self) -> float:
        """Scrape bottom residue off on the bar; mass drops back into the bowl."""
        cleared = self.utensil_bottom_g
        if cleared <= 0:
            return 0.0
        self.utensil_bottom_g = 0.0
        mid = 0.5 * (self.bar_start + self.bar_end) - self.bowl.center
        i = int(np.argmin(np.abs(self._cells_1d - mid[0])))
        j = int(np.argmin(np.abs(self._cells_1d - mid[1])))
        vi, vj = np.nonzero(self._valid_cells)
        k = int(np.argmin((vi - i) ** 2 + (vj - j) ** 2))
        self.food[vi[k], vj[k]] += cleared
        return float(cleared)

    def transfer_to_mouth(self) -> float:
        """Tip the utensil load into the mouth (called at the delivery tilt)."""
        if not self.mouth_open:
            return 0.0
        moved = self.utensil_top_g
        self.utensil_top_g = 0.0
        self.eaten_g += moved
        return float(moved)

    def _apply_spill(self):
        if (self.utensil.kind == "spoon" and self.utensil_top_g > 0
                and self.tip_tilt_deg() > self.spill_tilt_deg):
            p_mouth = self.mouth_pose.inverse().transform_point(self._tip_p)
            if np.linalg.norm(p_mouth) > 0.08:   # tilting inside the mouth is eating
                self.spilled_g += self.utensil_top_g
                self.utensil_top_g = 0.0

    # ------------------------------------------------------------- landmarks

    def landmarks_due(self) -> bool:
        return self.tick - self._last_lm_tick >= LANDMARK_PERIOD_TICKS

    def emit_landmarks(self, noise_sigma: float = 0.0,
                       outlier_prob: float = 0.0) -> LandmarkFrame | None:
        """Project the face template into the wrist camera at <= 10 Hz."""
        if not self.landmarks_due():
            return None
        self._last_lm_tick = self.tick
        cam_pose = self.camera_pose()
        cam = self.scenario.camera
        inv = cam_pose.inverse()

        template = face.face_template(self.mouth_open)
        world_pts = np.array([self.mouth_pose.transform_point(p) for p in template])
        cam_pts = np.array([inv.transform_point(p) for p in world_pts])

        occluded_all = self.occlusion_active()
        tip_cam = inv.transform_point(self._tip_p)

        pixels = np.zeros((68, 2))
        depth = np.zeros(68)
        visible = np.zeros(68, dtype=bool)
        for i in range(68):
            p = cam_pts[i]
            if noise_sigma > 0:
                p = p + self.rng.normal(0.0, noise_sigma, size=3)
            if outlier_prob > 0 and self.rng.uniform() < outlier_prob:
                d = self.rng.normal(size=3)
                p = p + (0.06 + 0.06 * self.rng.uniform()) * d / np.linalg.norm(d)
            if p[2] <= 0.05:
                continue
            u, v = cam.project(p)
            pixels[i] = (u, v)
            depth[i] = p[2]
            if occluded_all or not cam.in_frame(u, v):
                continue
            # utensil blocking the line of sight to this landmark
            ray = p / np.linalg.norm(p)
            closest = tip_cam - (tip_cam @ ray) * ray
            if (np.linalg.norm(closest) < 0.015 and 0.0 < tip_cam @ ray < p[2]):
                continue
            visible[i] = True

        return LandmarkFrame(tick=self.tick, t=self.time, pixels=pixels,
                             depth=depth, visible=visible, camera_pose=cam_pose)

    # ---------------------------------------------------------------- faults

    def inject_fault(self, kind: str, at: float | None = None,
                     duration: float = 0.5, magnitude: float = 20.0):
        self.faults.append(Fault(kind=kind, at=self.time if at is None else at,
                                 duration=duration, magnitude=magnitude))


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    t = float(np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))
