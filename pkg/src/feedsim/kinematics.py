"""Serial 7-R arm kinematics: forward kinematics and geometric Jacobian.

The chain is described joint by joint: a fixed translation from the parent
link frame, then a revolute rotation about a fixed axis.  The controllers
only need the end-effector (or tool-tip) pose and Jacobian, so no dynamics
parameters live here; those belong to the plant model in `world`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PoseSE3, UnitQuaternion


class JointLimitError(ValueError):
    pass


def _axis_rot(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


@dataclass
class ArmModel:
    """Kinematic chain of 7 revolute joints plus plant-side constants."""

    offsets: np.ndarray          # (7,3) translation preceding each joint, parent frame
    axes: np.ndarray             # (7,3) unit rotation axes in the joint frame
    lower: np.ndarray            # (7,) joint limits, rad
    upper: np.ndarray            # (7,)
    ee_offset: np.ndarray        # (3,) end-effector point past the last joint
    inertia: np.ndarray = field(default_factory=lambda: np.ones(7))     # kg m^2 proxies
    damping: np.ndarray = field(default_factory=lambda: np.ones(7))     # N m s/rad viscous
    gravity_gain: np.ndarray = field(default_factory=lambda: np.zeros(7))   # N m
    gravity_phase: np.ndarray = field(default_factory=lambda: np.zeros(7))  # rad

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=float).reshape(7, 3)
        self.axes = np.asarray(self.axes, dtype=float).reshape(7, 3)
        norms = np.linalg.norm(self.axes, axis=1)
        self.axes = self.axes / norms[:, None]
        for name in ("lower", "upper", "ee_offset", "inertia", "damping",
                     "gravity_gain", "gravity_phase"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            setattr(self, name, v)
        if self.ee_offset.shape != (3,):
            raise ValueError("ee_offset must be a 3-vector")
        if np.any(self.lower >= self.upper):
            raise ValueError("joint limits must satisfy lower < upper")

    @property
    def n_joints(self) -> int:
        return 7

    def check_limits(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (7,):
            raise ValueError("theta must have 7 entries")
        if not np.all(np.isfinite(theta)):
            raise JointLimitError("non-finite joint angles")
        if np.any(theta < self.lower - 1e-12) or np.any(theta > self.upper + 1e-12):
            bad = np.nonzero((theta < self.lower) | (theta > self.upper))[0]
            raise JointLimitError(f"joints {bad.tolist()} outside limits")
        return theta

    def gravity_torque(self, theta) -> np.ndarray:
        """Decoupled gravity torque proxy per joint."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return self.gravity_gain * np.cos(theta + self.gravity_phase)

    def joint_frames(self, theta) -> list[PoseSE3]:
        """World pose of each joint frame (after its rotation) plus the EE."""
        theta = self.check_limits(theta)
        frames = []
        pose = PoseSE3.identity()
        for i in range(7):
            pose = pose.compose(PoseSE3(self.offsets[i]))
            pose = pose.compose(PoseSE3(np.zeros(3),
                                        UnitQuaternion.from_axis_angle(self.axes[i], theta[i])))
            frames.append(pose)
        return frames

    def fk(self, theta, tool_offset: PoseSE3 | None = None) -> PoseSE3:
        """End-effector pose; composes a registered tool transform when given."""
        pose = self.joint_frames(theta)[-1].compose(PoseSE3(self.ee_offset))
        if tool_offset is not None:
            pose = pose.compose(tool_offset)
        return pose

    def fk_fast(self, theta, tool_pos=None, tool_rot=None):
        """(position, rotation matrix) of EE or tool tip; no limit checks.

        Matrix path for the 1 kHz loop, where building pose objects per tick
        would dominate the step cost.
        """
        R = np.eye(3)
        p = np.zeros(3)
        for i in range(7):
            p = p + R @ self.offsets[i]
            R = R @ _axis_rot(self.axes[i], theta[i])
        p = p + R @ self.ee_offset
        if tool_pos is not None:
            p = p + R @ tool_pos
        if tool_rot is not None:
            R = R @ tool_rot
        return p, R

    def fk_jacobian_fast(self, theta, tool_pos=None, tool_rot=None):
        """(tip position, tip rotation, 6x7 Jacobian) via plain matrices."""
        R = np.eye(3)
        p = np.zeros(3)
        origins = np.zeros((7, 3))
        axes_w = np.zeros((7, 3))
        for i in range(7):
            p = p + R @ self.offsets[i]
            R = R @ _axis_rot(self.axes[i], theta[i])
            origins[i] = p
            axes_w[i] = R @ self.axes[i]
        p_tip = p + R @ self.ee_offset
        if tool_pos is not None:
            p_tip = p_tip + R @ tool_pos
        if tool_rot is not None:
            R = R @ tool_rot
        J = np.zeros((6, 7))
        J[:3] = np.cross(axes_w, p_tip - origins).T
        J[3:] = axes_w.T
        return p_tip, R, J

    def jacobian(self, theta, tool_offset: PoseSE3 | None = None) -> np.ndarray:
        """6x7 geometric Jacobian at the EE (or tool tip): rows (v; w), world frame."""
        theta = self.check_limits(theta)
        tool_pos = None if tool_offset is None else tool_offset.position
        tool_rot = None if tool_offset is None else tool_offset.orientation.to_matrix()
        return self.fk_jacobian_fast(theta, tool_pos, tool_rot)[2]


def pr2_like_arm() -> ArmModel:
    """Default 7-R arm: PR2-style axis ordering with simplified offsets.

    Axis pattern z-y-x-y-x-y-x (pan, lift, roll, flex, roll, flex, roll).
    At theta = 0 the arm points along +x with the tip ~0.92 m out.
    """
    return ArmModel(
        offsets=np.array([
            [0.0, 0.0, 0.0],
            [0.10, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [0.40, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [0.32, 0.0, 0.0],
            [0.0, 0.0, 0.0],
        ]),
        axes=np.array([
            [0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0],
        ]),
        lower=np.array([-2.2, -1.6, -3.1, -2.6, -3.1, -2.3, -3.1]),
        upper=np.array([2.2, 1.6, 3.1, 2.6, 3.1, 2.3, 3.1]),
        ee_offset=np.array([0.10, 0.0, 0.0]),
        inertia=np.array([1.0, 1.0, 0.4, 0.25, 0.2, 0.15, 0.1]),
        damping=np.array([1.0, 1.0, 0.5, 0.5, 0.3, 0.3, 0.2]),
        gravity_gain=np.array([0.0, 12.0, 0.5, 5.0, 0.2, 1.5, 0.1]),
        gravity_phase=np.zeros(7),
    )
