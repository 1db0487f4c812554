"""Rigid-body math shared across the stack: unit quaternions, SE(3) poses, twists.

All rotations are unit quaternions stored w-first.  q and -q denote the same
rotation; comparison helpers account for the double cover.  Quaternions are
re-normalized after every composition so norm drift stays bounded over long
1 kHz control loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_NORM_TOL = 1e-9


def _as_vec(v, n, name):
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries: {a}")
    return a


@dataclass(frozen=True, eq=False)
class UnitQuaternion:
    """Unit quaternion, w-first storage."""

    wxyz: np.ndarray

    def __post_init__(self):
        q = _as_vec(self.wxyz, 4, "quaternion")
        n = np.linalg.norm(q)
        if n < 1e-12:
            raise ValueError("zero quaternion cannot be normalized")
        object.__setattr__(self, "wxyz", q / n)

    @staticmethod
    def identity() -> "UnitQuaternion":
        return UnitQuaternion(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "UnitQuaternion":
        a = _as_vec(axis, 3, "axis")
        n = np.linalg.norm(a)
        if n < 1e-12:
            raise ValueError("rotation axis must be nonzero")
        a = a / n
        half = 0.5 * float(angle)
        return UnitQuaternion(np.r_[np.cos(half), np.sin(half) * a])

    @staticmethod
    def from_rotvec(v) -> "UnitQuaternion":
        """Rotation vector (axis * angle, radians) to quaternion."""
        r = _as_vec(v, 3, "rotvec")
        angle = np.linalg.norm(r)
        if angle < 1e-12:
            # first-order expansion keeps tiny increments exact enough
            return UnitQuaternion(np.r_[1.0, 0.5 * r])
        return UnitQuaternion.from_axis_angle(r / angle, angle)

    @staticmethod
    def from_matrix(m) -> "UnitQuaternion":
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("rotation matrix must be 3x3")
        t = np.trace(m)
        if t > 0:
            s = np.sqrt(t + 1.0) * 2.0
            w = 0.25 * s
            x = (m[2, 1] - m[1, 2]) / s
            y = (m[0, 2] - m[2, 0]) / s
            z = (m[1, 0] - m[0, 1]) / s
        else:
            i = int(np.argmax(np.diag(m)))
            if i == 0:
                s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
                w = (m[2, 1] - m[1, 2]) / s
                x = 0.25 * s
                y = (m[0, 1] + m[1, 0]) / s
                z = (m[0, 2] + m[2, 0]) / s
            elif i == 1:
                s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
                w = (m[0, 2] - m[2, 0]) / s
                x = (m[0, 1] + m[1, 0]) / s
                y = 0.25 * s
                z = (m[1, 2] + m[2, 1]) / s
            else:
                s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
                w = (m[1, 0] - m[0, 1]) / s
                x = (m[0, 2] + m[2, 0]) / s
                y = (m[1, 2] + m[2, 1]) / s
                z = 0.25 * s
        return UnitQuaternion(np.array([w, x, y, z]))

    @staticmethod
    def from_rpy(roll: float, pitch: float, yaw: float) -> "UnitQuaternion":
        """ZYX convention: R = Rz(yaw) Ry(pitch) Rx(roll)."""
        qz = UnitQuaternion.from_axis_angle([0, 0, 1], yaw)
        qy = UnitQuaternion.from_axis_angle([0, 1, 0], pitch)
        qx = UnitQuaternion.from_axis_angle([1, 0, 0], roll)
        return qz.compose(qy).compose(qx)

    @property
    def w(self) -> float:
        return float(self.wxyz[0])

    @property
    def vec(self) -> np.ndarray:
        return self.wxyz[1:].copy()

    def compose(self, other: "UnitQuaternion") -> "UnitQuaternion":
        w1, x1, y1, z1 = self.wxyz
        w2, x2, y2, z2 = other.wxyz
        return UnitQuaternion(np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]))

    def inverse(self) -> "UnitQuaternion":
        w, x, y, z = self.wxyz
        return UnitQuaternion(np.array([w, -x, -y, -z]))

    def rotate(self, p) -> np.ndarray:
        """Rotate a 3-vector."""
        v = _as_vec(p, 3, "point")
        u = self.wxyz[1:]
        w = self.wxyz[0]
        # q v q^-1 expanded (Rodrigues form)
        return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.wxyz
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ])

    def to_rotvec(self) -> np.ndarray:
        """Rotation vector of the shortest-arc representation."""
        w, x, y, z = self.wxyz
        if w < 0:  # pick the hemisphere with angle <= pi
            w, x, y, z = -w, -x, -y, -z
        sin_half = np.linalg.norm([x, y, z])
        if sin_half < 1e-12:
            return 2.0 * np.array([x, y, z])
        angle = 2.0 * np.arctan2(sin_half, w)
        return (angle / sin_half) * np.array([x, y, z])

    def angle_to(self, other: "UnitQuaternion") -> float:
        """Geodesic angle between two rotations, double-cover aware."""
        r = self.inverse().compose(other)
        # atan2 form stays accurate near 0 and pi, unlike arccos of the dot
        return 2.0 * float(np.arctan2(np.linalg.norm(r.wxyz[1:]), abs(r.wxyz[0])))

    def allclose(self, other: "UnitQuaternion", tol: float = 1e-9) -> bool:
        return self.angle_to(other) <= tol


def slerp(q0: UnitQuaternion, q1: UnitQuaternion, t: float) -> UnitQuaternion:
    """Spherical linear interpolation along the shortest great arc."""
    if not np.isfinite(t):
        raise ValueError("interpolation fraction must be finite")
    if t < 0.0 or t > 1.0:
        raise ValueError(f"interpolation fraction must be in [0,1], got {t}")
    a = q0.wxyz
    b = q1.wxyz.copy()
    dot = float(np.dot(a, b))
    if dot < 0.0:  # shortest-path branch
        b = -b
        dot = -dot
    dot = min(1.0, dot)
    theta = np.arccos(dot)
    if theta < 1e-8:
        # endpoints (nearly) identical: normalized lerp is exact to rounding
        return UnitQuaternion((1.0 - t) * a + t * b)
    s = np.sin(theta)
    return UnitQuaternion((np.sin((1.0 - t) * theta) / s) * a
                          + (np.sin(t * theta) / s) * b)


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform: rotation then translation."""

    position: np.ndarray
    orientation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vec(self.position, 3, "position"))

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(np.zeros(3), UnitQuaternion.identity())

    @staticmethod
    def from_parts(position, orientation: UnitQuaternion) -> "PoseSE3":
        return PoseSE3(np.asarray(position, dtype=float), orientation)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self ∘ other: apply `other` first, then `self`."""
        return PoseSE3(self.position + self.orientation.rotate(other.position),
                       self.orientation.compose(other.orientation))

    def inverse(self) -> "PoseSE3":
        inv_q = self.orientation.inverse()
        return PoseSE3(-inv_q.rotate(self.position), inv_q)

    def transform_point(self, p) -> np.ndarray:
        return self.position + self.orientation.rotate(p)

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.orientation.to_matrix()
        m[:3, 3] = self.position
        return m

    def distance_to(self, other: "PoseSE3") -> tuple[float, float]:
        """(position distance [m], orientation angle [rad])."""
        return (float(np.linalg.norm(self.position - other.position)),
                self.orientation.angle_to(other.orientation))


@dataclass(frozen=True, eq=False)
class Twist6:
    """Small displacement: linear meters + rotation-vector radians."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "linear", _as_vec(self.linear, 3, "linear"))
        object.__setattr__(self, "angular", _as_vec(self.angular, 3, "angular"))

    @staticmethod
    def zero() -> "Twist6":
        return Twist6(np.zeros(3), np.zeros(3))

    def stacked(self) -> np.ndarray:
        """6-vector (linear; angular) used as the task-space target."""
        return np.r_[self.linear, self.angular]

    def apply_to(self, pose: PoseSE3) -> PoseSE3:
        """Displace a pose by this twist (world-frame increment)."""
        return PoseSE3(pose.position + self.linear,
                       UnitQuaternion.from_rotvec(self.angular).compose(pose.orientation))


def pose_delta(target: PoseSE3, current: PoseSE3) -> Twist6:
    """World-frame twist that carries `current` onto `target`."""
    dq = target.orientation.compose(current.orientation.inverse())
    return Twist6(target.position - current.position, dq.to_rotvec())


def pose_interpolate(start: PoseSE3, goal: PoseSE3, t: float) -> PoseSE3:
    """Linear position blend + slerp orientation; t=0 -> start, t=1 -> goal."""
    if t < 0.0 or t > 1.0:
        raise ValueError(f"interpolation fraction must be in [0,1], got {t}")
    return PoseSE3((1.0 - t) * start.position + t * goal.position,
                   slerp(start.orientation, goal.orientation, t))


def transform_point(frame: PoseSE3, p) -> np.ndarray:
    """Map a point from `frame` coordinates into the parent frame."""
    return frame.transform_point(p)
