"""Two-level control stack: 50 Hz box-constrained MPC over joint-angle
increments, 1 kHz low-gain PID torque law, and trajectory generation for the
three motion-primitive types.

The MPC minimizes the task-space tracking error of a stacked
(position; orientation) increment against the joint increment mapped through
the effective Jacobian

    J_eff = J_ee (K + sum_i J_ci^T K_ci J_ci)^{-1} K

subject to per-tick joint increment bounds.  With every contact stiffness
zeroed this reduces exactly to J_eff = J_ee.  A small Tikhonov term makes the
7-joint minimizer unique.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import PoseSE3, pose_delta, pose_interpolate
from .kinematics import ArmModel
from .qp import kkt_residual, solve_box_ls

PID_K_DEFAULT = np.array([90.0, 80.0, 20.0, 22.0, 12.0, 27.5, 20.0])   # N m / rad
PID_D_DEFAULT = np.array([10.0, 10.0, 2.0, 1.0, 1.0, 2.0, 2.0])        # N m s / rad

MPC_RATE_HZ = 50
PID_PER_MPC = 20    # 1 kHz inner ticks per 50 Hz outer tick


class IkError(RuntimeError):
    pass


@dataclass
class PidGains:
    """Low-gain PID diagonals; defaults are the published values."""

    k: np.ndarray = field(default_factory=lambda: PID_K_DEFAULT.copy())
    d: np.ndarray = field(default_factory=lambda: PID_D_DEFAULT.copy())

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=float).reshape(-1)
        self.d = np.asarray(self.d, dtype=float).reshape(-1)
        if np.any(self.k <= 0) or np.any(self.d <= 0):
            raise ValueError("gain diagonals must be positive")


def pid_torque(theta_d, theta, theta_dot, gains: PidGains, tau_g) -> np.ndarray:
    """tau = K (theta_d - theta) - D theta_dot + tau_g, elementwise.

    Pure function; torque saturation is a separate limiter.
    """
    theta_d = np.asarray(theta_d, dtype=float)
    theta = np.asarray(theta, dtype=float)
    theta_dot = np.asarray(theta_dot, dtype=float)
    tau_g = np.asarray(tau_g, dtype=float)
    return gains.k * (theta_d - theta) - gains.d * theta_dot + tau_g


def saturate(tau, limit: float) -> np.ndarray:
    return np.clip(tau, -limit, limit)


@dataclass
class MpcProblem:
    dp: np.ndarray                        # desired EE position change, m
    dq: np.ndarray                        # desired orientation change, rotation vector
    J_ee: np.ndarray                      # 6 x n
    K: np.ndarray                         # n x n diagonal joint stiffness
    contacts: list = field(default_factory=list)   # [(J_ci 3xn, K_ci 3x3), ...]
    lower: np.ndarray = None              # n, rad
    upper: np.ndarray = None
    lam: float = 1e-6

    def __post_init__(self):
        self.dp = np.asarray(self.dp, dtype=float).reshape(3)
        self.dq = np.asarray(self.dq, dtype=float).reshape(3)
        self.J_ee = np.asarray(self.J_ee, dtype=float)
        n = self.J_ee.shape[1]
        self.K = np.asarray(self.K, dtype=float)
        if self.K.shape != (n, n):
            raise ValueError("K must be n x n")
        diag = np.diag(self.K)
        if np.any(diag <= 0) or np.any(np.abs(self.K - np.diag(diag)) > 0):
            raise ValueError("K must be diagonal positive")
        if self.lower is None:
            self.lower = -0.02 * np.ones(n)
        if self.upper is None:
            self.upper = 0.02 * np.ones(n)
        self.lower = np.asarray(self.lower, dtype=float).reshape(n)
        self.upper = np.asarray(self.upper, dtype=float).reshape(n)
        if np.any(self.lower > 0) or np.any(self.upper < 0):
            raise ValueError("bounds must satisfy lower <= 0 <= upper")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")


def effective_jacobian(problem: MpcProblem) -> np.ndarray:
    """J_eff of the contact-aware objective; equals J_ee when contacts vanish."""
    if not problem.contacts:
        return problem.J_ee
    n = problem.J_ee.shape[1]
    M = problem.K.copy()
    for J_ci, K_ci in problem.contacts:
        J_ci = np.asarray(J_ci, dtype=float)
        K_ci = np.asarray(K_ci, dtype=float)
        M += J_ci.T @ K_ci @ J_ci
    # raises LinAlgError when the combined stiffness is singular
    return problem.J_ee @ np.linalg.solve(M, problem.K)


def mpc_step(problem: MpcProblem) -> np.ndarray:
    """Joint-increment minimizer of the tracking objective over the box."""
    J_eff = effective_jacobian(problem)
    target = np.r_[problem.dp, problem.dq]
    x = solve_box_ls(J_eff, target, problem.lam, problem.lower, problem.upper)
    res = kkt_residual(J_eff, target, problem.lam, problem.lower, problem.upper, x)
    if res > 1e-8:
        raise np.linalg.LinAlgError(f"MPC KKT residual {res:.2e} exceeds 1e-8")
    return np.clip(x, problem.lower, problem.upper)


class MotionKind(str, Enum):
    JOINT_PTP = "joint_ptp"
    CARTESIAN_PTP = "cartesian_ptp"
    CARTESIAN_LINEAR = "cartesian_linear"


@dataclass
class MotionPrimitive:
    goal: PoseSE3
    duration: float
    kind: MotionKind

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        self.kind = MotionKind(self.kind)


def min_jerk(s: float) -> float:
    """Minimum-jerk time scaling on [0, 1]."""
    s = min(max(s, 0.0), 1.0)
    return min(1.0, s * s * s * (10.0 - 15.0 * s + 6.0 * s * s))


def ik_solve(arm: ArmModel, target: PoseSE3, seed_theta, tool: PoseSE3 | None = None,
             max_iters: int = 200, pos_tol: float = 1e-5, ori_tol: float = 1e-4,
             damping: float = 1e-3) -> np.ndarray:
    """Damped least-squares IK seeded at the current configuration."""
    theta = np.asarray(seed_theta, dtype=float).copy()
    tool_pos = None if tool is None else tool.position
    tool_rot = None if tool is None else tool.orientation.to_matrix()
    tgt_p = target.position
    tgt_R = target.orientation.to_matrix()
    last_pn, last_an = np.inf, np.inf
    for _ in range(max_iters):
        p, R, J = arm.fk_jacobian_fast(theta, tool_pos, tool_rot)
        e = np.empty(6)
        e[:3] = tgt_p - p
        e[3:] = _rotvec_between(R, tgt_R)
        last_pn = np.linalg.norm(e[:3])
        last_an = np.linalg.norm(e[3:])
        if last_pn <= pos_tol and last_an <= ori_tol:
            return theta
        # clamp the error twist so the damped step stays well conditioned
        if last_pn > 0.08:
            e[:3] *= 0.08 / last_pn
        if last_an > 0.4:
            e[3:] *= 0.4 / last_an
        step = J.T @ np.linalg.solve(J @ J.T + damping * np.eye(6), e)
        theta = np.clip(theta + step, arm.lower, arm.upper)
    raise IkError(f"IK failed: residual {last_pn:.2e} m, {last_an:.2e} rad")


def _rotvec_between(R_cur: np.ndarray, R_tgt: np.ndarray) -> np.ndarray:
    """Rotation vector of R_tgt R_cur^T (world-frame orientation error)."""
    R = R_tgt @ R_cur.T
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * np.linalg.norm(w)
    c = 0.5 * (np.trace(R) - 1.0)
    if s < 1e-12:
        if c > 0:
            return 0.5 * w
        # angle near pi: fall back to the quaternion path
        from .geometry import UnitQuaternion
        return UnitQuaternion.from_matrix(R).to_rotvec()
    angle = np.arctan2(s, c)
    return (angle / (2.0 * s)) * w


@dataclass
class Setpoint:
    t: float
    kind: MotionKind
    pose: PoseSE3 | None = None
    joints: np.ndarray | None = None


class Trajectory:
    """Continuous setpoint source for one primitive, sampled at the MPC rate."""

    def __init__(self, kind: MotionKind, duration: float, start_pose: PoseSE3,
                 goal_pose: PoseSE3, start_joints=None, goal_joints=None):
        self.kind = kind
        self.duration = float(duration)
        self.start_pose = start_pose
        self.goal_pose = goal_pose
        self.start_joints = None if start_joints is None else np.asarray(start_joints, float)
        self.goal_joints = None if goal_joints is None else np.asarray(goal_joints, float)

    def fraction(self, t: float) -> float:
        s = min(max(t / self.duration, 0.0), 1.0)
        if self.kind == MotionKind.CARTESIAN_LINEAR:
            return s                       # constant speed
        return min_jerk(s)

    def sample(self, t: float) -> Setpoint:
        f = self.fraction(t)
        if self.kind == MotionKind.JOINT_PTP:
            joints = self.start_joints + f * (self.goal_joints - self.start_joints)
            return Setpoint(t=t, kind=self.kind, joints=joints)
        return Setpoint(t=t, kind=self.kind,
                        pose=pose_interpolate(self.start_pose, self.goal_pose, f))

    def setpoints_50hz(self) -> list[Setpoint]:
        n = int(round(self.duration * MPC_RATE_HZ))
        return [self.sample(k / MPC_RATE_HZ) for k in range(n + 1)]


def plan_primitive(prim: MotionPrimitive, current_theta, current_pose: PoseSE3,
                   arm: ArmModel, tool: PoseSE3 | None = None,
                   ik_iters: int = 200, ik_tol: float = 1e-5) -> Trajectory:
    """Build the timed setpoint source for one motion primitive."""
    if prim.kind == MotionKind.JOINT_PTP:
        goal_joints = ik_solve(arm, prim.goal, current_theta, tool,
                               max_iters=ik_iters, pos_tol=ik_tol)
        return Trajectory(prim.kind, prim.duration, current_pose, prim.goal,
                          start_joints=np.asarray(current_theta, float).copy(),
                          goal_joints=goal_joints)
    return Trajectory(prim.kind, prim.duration, current_pose, prim.goal)


@dataclass
class ExecutionReport:
    success: bool
    interrupted: bool
    timed_out: bool
    duration: float
    final_pos_err: float
    final_ori_err: float
    max_dtheta: float
    samples: list = field(default_factory=list)   # (t, tip position, tilt deg)


class TrackingController:
    """Drives one arm: nested 50 Hz MPC + 1 kHz PID stepping of the world."""

    def __init__(self, world, gains: PidGains | None = None):
        self.world = world
        cfg = world.scenario.control
        self.gains = gains or PidGains(
            k=np.asarray(cfg.get("pid_k", PID_K_DEFAULT), float),
            d=np.asarray(cfg.get("pid_d", PID_D_DEFAULT), float))
        self.lam = float(cfg.get("mpc_lambda", 1e-6))
        self.bound = float(cfg.get("dtheta_bound", 0.02))
        self.pos_tol = float(cfg.get("pos_tol", 0.002))
        self.ori_tol = np.deg2rad(float(cfg.get("ori_tol_deg", 1.0)))
        self.torque_limit = float(cfg.get("torque_limit", 30.0))
        self.settle_factor = float(cfg.get("settle_factor", 0.5))
        self.ik_iters = int(cfg.get("ik_iters", 200))
        self.ik_tol = float(cfg.get("ik_tol", 1e-5))
        self.K_mpc = np.diag(np.asarray(cfg.get("mpc_k", self.gains.k), float))
        self.abort_requested = False
        self.commanded_ticks = 0     # torque commands issued (quiescence check)

    def request_abort(self):
        self.abort_requested = True

    def plan(self, prim: MotionPrimitive) -> Trajectory:
        return plan_primitive(prim, self.world.theta, self.world.tip_pose(),
                              self.world.arm, self.world.utensil.tip_offset,
                              self.ik_iters, self.ik_tol)

    def hold_tick(self, theta_d=None):
        """One 1 kHz tick holding a joint setpoint (defaults to current)."""
        if theta_d is None:
            theta_d = self.world.theta
        tau = pid_torque(theta_d, self.world.theta, self.world.theta_dot,
                         self.gains, self.world.gravity())
        self.commanded_ticks += 1
        return self.world.step(saturate(tau, self.torque_limit))

    def _goal_error(self, traj: Trajectory) -> tuple[float, float]:
        tip = self.world.tip_pose()
        return tip.distance_to(traj.goal_pose)

    def track(self, traj: Trajectory):
        """Generator: one yield per 1 kHz tick; returns an ExecutionReport.

        The abort flag is observable between any two ticks.
        """
        world = self.world
        t0 = world.time
        timeout = traj.duration * (1.0 + self.settle_factor)
        theta_d = world.theta.copy()
        max_dtheta = 0.0
        samples = []
        k = 0
        while True:
            t = world.time - t0
            pos_err, ori_err = self._goal_error(traj)
            if pos_err <= self.pos_tol and ori_err <= self.ori_tol:
                return ExecutionReport(True, False, False, t, pos_err, ori_err,
                                       max_dtheta, samples)
            if t > timeout:
                return ExecutionReport(False, False, True, t, pos_err, ori_err,
                                       max_dtheta, samples)
            if self.abort_requested:
                self.abort_requested = False
                return ExecutionReport(False, True, False, t, pos_err, ori_err,
                                       max_dtheta, samples)

            if k % PID_PER_MPC == 0:
                target = traj.sample(min(t, traj.duration))
                if traj.kind == MotionKind.JOINT_PTP:
                    step = np.clip(target.joints - theta_d, -self.bound, self.bound)
                    theta_d = theta_d + step
                    max_dtheta = max(max_dtheta, float(np.max(np.abs(step))))
                else:
                    tw = pose_delta(target.pose, world.tip_pose())
                    problem = MpcProblem(dp=tw.linear, dq=tw.angular,
                                         J_ee=world.tool_jacobian(), K=self.K_mpc,
                                         lower=-self.bound * np.ones(7),
                                         upper=self.bound * np.ones(7), lam=self.lam)
                    dtheta = mpc_step(problem)
                    theta_d = world.theta + dtheta
                    max_dtheta = max(max_dtheta, float(np.max(np.abs(dtheta))))
                samples.append((world.time, world.tip_position(), world.tip_tilt_deg()))

            self.hold_tick(theta_d)
            k += 1
            yield
