"""Scenario configuration: world geometry, utensils, controller and estimator
parameters, fault injection schedule, and seeds.

A scenario is a YAML file; the packaged defaults live in data/.  Everything a
run needs to be reproducible is in here (plus the seed), and the canonical
hash of the loaded scenario is recorded in session logs so replays can refuse
mismatched setups.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .geometry import PoseSE3, UnitQuaternion
from .kinematics import ArmModel, pr2_like_arm

UTENSIL_LIBRARY = {
    # tip offsets are nominal values defined for this simulator, not
    # measured tool registrations
    "silicone_spoon":      {"kind": "spoon", "tip": [0.18, 0.0, -0.01], "capacity_g": 12.0, "footprint_m": 0.022},
    "small_plastic_spoon": {"kind": "spoon", "tip": [0.16, 0.0, -0.01], "capacity_g": 8.0,  "footprint_m": 0.018},
    "large_plastic_spoon": {"kind": "spoon", "tip": [0.20, 0.0, -0.012], "capacity_g": 16.0, "footprint_m": 0.026},
    "plastic_fork":        {"kind": "fork", "tip": [0.17, 0.0, -0.008], "capacity_g": 6.0,  "footprint_m": 0.012},
    "metal_fork":          {"kind": "fork", "tip": [0.17, 0.0, -0.008], "capacity_g": 7.0,  "footprint_m": 0.012},
}


@dataclass(frozen=True)
class Utensil:
    name: str
    kind: str                # spoon | fork
    tip_offset: PoseSE3      # EE frame -> tip frame
    capacity_g: float
    footprint_m: float

    @staticmethod
    def from_name(name: str) -> "Utensil":
        if name not in UTENSIL_LIBRARY:
            raise ValueError(f"unknown utensil {name!r}; known: {sorted(UTENSIL_LIBRARY)}")
        u = UTENSIL_LIBRARY[name]
        return Utensil(name, u["kind"], PoseSE3(np.array(u["tip"], dtype=float)),
                       u["capacity_g"], u["footprint_m"])


@dataclass(frozen=True)
class Bowl:
    center: np.ndarray       # world position of the interior bottom center
    diameter: float
    guard_height: float = 0.03
    grid_n: int = 9

    @property
    def radius(self) -> float:
        return self.diameter / 2.0


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    wrist_offset: PoseSE3    # tip frame -> camera frame

    def project(self, p_cam: np.ndarray) -> tuple[float, float]:
        return (self.fx * p_cam[0] / p_cam[2] + self.cx,
                self.fy * p_cam[1] / p_cam[2] + self.cy)

    def unproject(self, u: float, v: float, depth: float) -> np.ndarray:
        return np.array([(u - self.cx) / self.fx * depth,
                         (v - self.cy) / self.fy * depth,
                         depth])

    def in_frame(self, u: float, v: float) -> bool:
        return 0.0 <= u < self.width and 0.0 <= v < self.height


def _orient_from_facing(facing, up) -> UnitQuaternion:
    """Build a frame whose +z is `facing` and +y is `up` projected clean."""
    z = np.asarray(facing, dtype=float)
    z = z / np.linalg.norm(z)
    y = np.asarray(up, dtype=float)
    y = y - (y @ z) * z
    y = y / np.linalg.norm(y)
    x = np.cross(y, z)
    return UnitQuaternion.from_matrix(np.stack([x, y, z], axis=1))


# tip frame -> camera frame: camera looks along tool +x, image y points down
_CAM_R = np.array([[0.0, 0.0, 1.0],
                   [-1.0, 0.0, 0.0],
                   [0.0, -1.0, 0.0]])


@dataclass
class Scenario:
    raw: dict
    seed: int
    arm: ArmModel
    bowl: Bowl
    bar_start: np.ndarray
    bar_end: np.ndarray
    utensil: Utensil
    mouth_pose: PoseSE3
    mouth_open: bool
    camera: CameraModel
    food_grid: np.ndarray          # (grid_n, grid_n) grams per cell
    control: dict
    perception: dict
    monitor: dict
    sim: dict
    faults: list = field(default_factory=list)
    duration_scale: float = 1.0

    @property
    def bar_length(self) -> float:
        return float(np.linalg.norm(self.bar_end - self.bar_start))

    def canonical_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **overrides) -> "Scenario":
        """New scenario with dotted-path overrides applied to the raw dict."""
        raw = copy.deepcopy(self.raw)
        for dotted, value in overrides.items():
            node = raw
            parts = dotted.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = value
        return Scenario.from_dict(raw)

    @staticmethod
    def from_yaml(path) -> "Scenario":
        with open(path) as f:
            raw = yaml.safe_load(f)
        if not isinstance(raw, dict):
            raise ValueError(f"scenario file {path} did not parse to a mapping")
        return Scenario.from_dict(raw)

    @staticmethod
    def default(name: str = "scenario_yogurt") -> "Scenario":
        text = resources.files("feedsim.data").joinpath(f"{name}.yaml").read_text()
        return Scenario.from_dict(yaml.safe_load(text))

    @staticmethod
    def from_dict(raw: dict) -> "Scenario":
        raw = copy.deepcopy(raw)
        if raw.get("version") != 1:
            raise ValueError("scenario version must be 1")

        arm_spec = raw.get("arm", "pr2_like")
        if arm_spec == "pr2_like":
            arm = pr2_like_arm()
        else:
            arm = ArmModel(
                offsets=np.array(arm_spec["offsets"], dtype=float),
                axes=np.array(arm_spec["axes"], dtype=float),
                lower=np.array(arm_spec["lower"], dtype=float),
                upper=np.array(arm_spec["upper"], dtype=float),
                ee_offset=np.array(arm_spec["ee_offset"], dtype=float),
                inertia=np.array(arm_spec["inertia"], dtype=float),
                damping=np.array(arm_spec["damping"], dtype=float),
                gravity_gain=np.array(arm_spec["gravity_gain"], dtype=float),
                gravity_phase=np.array(arm_spec["gravity_phase"], dtype=float),
            )

        b = raw["bowl"]
        bowl = Bowl(center=np.array(b["center"], dtype=float),
                    diameter=float(b["diameter"]),
                    guard_height=float(b.get("guard_height", 0.03)),
                    grid_n=int(b.get("grid_n", 9)))

        bar = raw["wiping_bar"]
        bar_start = bowl.center + np.array(bar["start"], dtype=float)
        bar_end = bowl.center + np.array(bar["end"], dtype=float)
        length = np.linalg.norm(bar_end - bar_start)
        if abs(length - 0.135) > 1e-9:
            raise ValueError(f"wiping bar must be 0.135 m long, got {length:.4f}")

        m = raw["mouth"]
        mouth_pose = PoseSE3(np.array(m["position"], dtype=float),
                             _orient_from_facing(m["facing"], m.get("up", [0, 0, 1])))

        c = raw["camera"]
        wrist_offset = PoseSE3(np.array(c.get("offset", [-0.08, 0.0, 0.06]), dtype=float),
                               UnitQuaternion.from_matrix(_CAM_R))
        camera = CameraModel(fx=float(c.get("fx", 525.0)), fy=float(c.get("fy", 525.0)),
                             cx=float(c.get("cx", 320.0)), cy=float(c.get("cy", 240.0)),
                             width=int(c.get("width", 640)), height=int(c.get("height", 480)),
                             wrist_offset=wrist_offset)

        food = raw.get("food", {})
        grid = _build_food_grid(bowl, food)

        return Scenario(
            raw=raw,
            seed=int(raw.get("seed", 0)),
            arm=arm,
            bowl=bowl,
            bar_start=bar_start,
            bar_end=bar_end,
            utensil=Utensil.from_name(raw.get("utensil", "silicone_spoon")),
            mouth_pose=mouth_pose,
            mouth_open=bool(m.get("open", True)),
            camera=camera,
            food_grid=grid,
            control=dict(raw.get("control", {})),
            perception=dict(raw.get("perception", {})),
            monitor=dict(raw.get("monitor", {})),
            sim=dict(raw.get("sim", {})),
            faults=list(raw.get("faults", [])),
            duration_scale=float(raw.get("duration_scale", 1.0)),
        )


def valid_cell_mask(bowl: Bowl) -> np.ndarray:
    """Cells whose centers lie inside the usable bowl interior."""
    n = bowl.grid_n
    xs = cell_centers_1d(bowl)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    return np.hypot(X, Y) <= 0.9 * bowl.radius


def cell_centers_1d(bowl: Bowl) -> np.ndarray:
    n = bowl.grid_n
    w = bowl.diameter / n
    return (np.arange(n) - (n - 1) / 2.0) * w


def _build_food_grid(bowl: Bowl, food: dict) -> np.ndarray:
    n = bowl.grid_n
    grid = np.zeros((n, n))
    mask = valid_cell_mask(bowl)
    preset = food.get("preset", "mound")
    total = float(food.get("total_grams", 150.0))
    if preset == "empty" or total <= 0:
        return grid
    if preset == "explicit":
        grid = np.asarray(food["grid"], dtype=float)
        if grid.shape != (n, n):
            raise ValueError(f"explicit food grid must be {n}x{n}")
        if np.any(grid < 0):
            raise ValueError("food masses must be nonnegative")
        return grid * mask
    xs = cell_centers_1d(bowl)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    if preset == "uniform":
        weights = mask.astype(float)
    elif preset == "mound":
        mc = food.get("mound_center", [0.0, 0.0])
        sigma = float(food.get("mound_sigma", bowl.radius * 0.5))
        weights = np.exp(-((X - mc[0]) ** 2 + (Y - mc[1]) ** 2) / (2 * sigma ** 2)) * mask
    else:
        raise ValueError(f"unknown food preset {preset!r}")
    weights_sum = weights.sum()
    if weights_sum <= 0:
        return grid
    grid = total * weights / weights_sum
    # respect the guard height: cap cell mass at the guard-height equivalent
    h_per_g = float(food.get("height_per_gram", 0.0053))
    cap = bowl.guard_height / h_per_g
    for _ in range(8):   # redistribute clipped mass onto unclipped cells
        over = np.clip(grid - cap, 0.0, None)
        if over.sum() < 1e-9:
            break
        grid = np.minimum(grid, cap)
        room = (cap - grid) * mask
        if room.sum() <= 0:
            break
        grid += over.sum() * room / room.sum()
    return grid
