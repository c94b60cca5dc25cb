"""Planar maximal-coordinate rigid-body simulation API.

State is batched: every array carries a leading env axis N (N = 1 for
single-instance use). Functions are pure with respect to their inputs
except `step`, which mutates the passed SimState in place and returns it
together with the step diagnostics. Identical inputs produce bit-identical
outputs; batches of envs never interact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .robot import ModelArrays, RobotModel, Terrain

GRAVITY = 9.81
SUBSTEP_DT = 0.005  # physics at 200 Hz


@dataclass
class SolverSettings:
    """Sequential-impulse solver settings (stable defaults for dt = 5 ms)."""

    iterations: int = 16
    position_iterations: int = 3
    restitution_iterations: int = 8  # final normal-only cleanup sweeps
    baumgarte: float = 0.2       # contact/limit position correction fraction
    joint_bias: float = 1.0      # joint anchor error feedback, fraction of 1/dt
    slop: float = 0.001          # penetration allowance, m
    margin: float = 0.001        # contact activation margin, m
    max_correction: float = 0.05  # per-iteration positional clamp, m
    deep_slop: float = 0.005     # penetration beyond which velocity recovery engages, m
    max_recovery_velocity: float = 0.5   # cap on the deep-penetration bias, m/s
    joint_damping: float = 0.1   # passive drive friction, N*m*s/rad


@dataclass
class SimState:
    """Dynamic state of a batch of robots: link poses/velocities, the
    per-actuator first-order lag filter state, and the solver's warm-start
    impulse caches (value state, so stepping stays a pure function)."""

    pose: np.ndarray       # (N, L, 3) x, z, theta
    vel: np.ndarray        # (N, L, 3) vx, vz, omega
    lag_torque: np.ndarray  # (N, J)
    time: np.ndarray       # (N,)
    warm_joint: np.ndarray    # (N, J, 2)
    warm_contact: np.ndarray  # (N, 2L, 2) normal/tangent impulse per endpoint slot

    @staticmethod
    def zeros(n_envs: int, model: RobotModel) -> "SimState":
        return SimState(
            pose=np.zeros((n_envs, model.n_links, 3)),
            vel=np.zeros((n_envs, model.n_links, 3)),
            lag_torque=np.zeros((n_envs, model.n_joints)),
            time=np.zeros(n_envs),
            warm_joint=np.zeros((n_envs, model.n_joints, 2)),
            warm_contact=np.zeros((n_envs, 2 * model.n_links, 2)),
        )

    def copy(self) -> "SimState":
        return SimState(self.pose.copy(), self.vel.copy(), self.lag_torque.copy(),
                        self.time.copy(), self.warm_joint.copy(), self.warm_contact.copy())

    def reset_env(self, i: int) -> None:
        """Zero the solver caches and lag state of one env (fresh episode)."""
        self.lag_torque[i] = 0.0
        self.warm_joint[i] = 0.0
        self.warm_contact[i] = 0.0
        self.time[i] = 0.0

    @property
    def n_envs(self) -> int:
        return self.pose.shape[0]

    def joint_angles(self, arrays: ModelArrays) -> np.ndarray:
        return self.pose[:, arrays.j_child, 2] - self.pose[:, arrays.j_parent, 2]

    def joint_rates(self, arrays: ModelArrays) -> np.ndarray:
        return self.vel[:, arrays.j_child, 2] - self.vel[:, arrays.j_parent, 2]


@dataclass
class StepDiagnostics:
    """Per-substep solver outputs used by rewards and damage metrics."""

    contact_impulse: np.ndarray  # (N, L, 2) accumulated contact impulse, N*s
    joint_impulse: np.ndarray    # (N, J, 2) revolute constraint impulse, N*s
    contact_flag: np.ndarray     # (N, L) uint8, geometric contact this step
    link_accel: np.ndarray       # (N, L, 2) finite-difference linear acceleration
    joint_accel: np.ndarray      # (N, J) finite-difference joint acceleration
    applied_torque: np.ndarray   # (N, J)
    fault: np.ndarray            # (N,) uint8

    def joint_internal_force(self, dt: float = SUBSTEP_DT) -> np.ndarray:
        """(N, J) constraint reaction magnitude in N (impulse / dt)."""
        return np.sqrt(np.sum(self.joint_impulse ** 2, axis=2)) / dt


@dataclass
class ContactPoint:
    link: int
    point: np.ndarray      # world (2,)
    normal: np.ndarray     # (2,)
    penetration: float
    friction: float


def forward_kinematics(model: RobotModel, base_pose: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Link poses (N, L, 3) from base poses (N, 3) and joint angles (N, J)."""
    a = model.arrays()
    base_pose = np.atleast_2d(np.asarray(base_pose, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    if q.shape[1] != model.n_joints:
        raise ValueError(f"expected {model.n_joints} joint angles, got {q.shape[1]}")
    if base_pose.shape[0] != q.shape[0]:
        raise ValueError("base pose and joint angle batch sizes differ")
    out = np.empty((q.shape[0], model.n_links, 3))
    kernels.fk_batch(base_pose, q, a.j_parent, a.j_child, a.anchor_p, a.anchor_c, out)
    return out


def link_velocities(model: RobotModel, pose: np.ndarray, base_vel: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Link velocities (N, L, 3) consistent with base velocity and joint rates."""
    a = model.arrays()
    out = np.empty_like(pose)
    for n in range(pose.shape[0]):
        kernels.fk_vel_env(pose[n], base_vel[n], qdot[n], a.j_parent, a.j_child,
                           a.anchor_p, a.anchor_c, out[n])
    return out


def detect_contacts(model: RobotModel, state: SimState, terrain: Terrain,
                    margin: float = SolverSettings.margin, env: int = 0) -> list[ContactPoint]:
    """Active capsule-endpoint contacts for one env, in slot order."""
    a = model.arrays()
    if not np.all(np.isfinite(state.pose[env])):
        raise ValueError("state is not finite")
    K = 2 * model.n_links
    con = np.empty((1, K, kernels._CONTACT_COLS))
    h = terrain.heights[env if terrain.batch > 1 else 0][None, :]
    mu = terrain.friction[env if terrain.batch > 1 else 0][None, :]
    kernels.detect_batch(state.pose[env][None, :, :], a.cap_a, a.cap_b, a.radius,
                         h, mu, terrain.spacing, terrain.x0, margin, con)
    out = []
    for k in range(K):
        if con[0, k, 10] != 0.0:
            l = k // 2
            out.append(ContactPoint(
                link=l,
                point=state.pose[env, l, :2] + con[0, k, 2:4],
                normal=con[0, k, 0:2].copy(),
                penetration=float(con[0, k, 4]),
                friction=float(con[0, k, 5]),
            ))
    return out


def pd_torque(target: np.ndarray, q: np.ndarray, qdot: np.ndarray,
              kp: float, kd: float, tau_max: float) -> np.ndarray:
    """tau = clamp(kp (q* - q) - kd qdot, +-tau_max)."""
    if kp < 0 or kd < 0:
        raise ValueError("gains must be non-negative")
    return np.clip(kp * (target - q) - kd * qdot, -tau_max, tau_max)


def actuate(state: SimState, raw_torque: np.ndarray, lag_alpha: np.ndarray,
            tau_max: float, active: np.ndarray | None = None) -> np.ndarray:
    """Advance the first-order drive lag filter and return applied torques.

    `lag_alpha` is dt/T_lag clamped to [0, 1] per env/joint. Disabled
    actuators (active mask 0) output zero torque and hold their filter
    state at zero, so re-enabling starts from rest.
    """
    out = state.lag_torque
    out += lag_alpha * (raw_torque - out)
    np.clip(out, -tau_max, tau_max, out=out)
    if active is not None:
        out *= active[:, None]
    return out.copy()


def lag_alpha(T_lag: np.ndarray, dt: float = SUBSTEP_DT) -> np.ndarray:
    return np.clip(dt / np.maximum(T_lag, dt), 0.0, 1.0)


class Sim:
    """Stepping context that owns the reusable diagnostic buffers."""

    def __init__(self, model: RobotModel, n_envs: int, settings: SolverSettings | None = None,
                 gravity: float = GRAVITY):
        self.model = model
        self.arrays = model.arrays()
        self.settings = settings or SolverSettings()
        self.gravity = gravity
        L, J = model.n_links, model.n_joints
        self.inv_m = np.tile(1.0 / self.arrays.mass, (n_envs, 1))
        self.inv_i = np.tile(1.0 / self.arrays.inertia, (n_envs, 1))
        self._imp_contact = np.zeros((n_envs, L, 2))
        self._imp_joint = np.zeros((n_envs, J, 2))
        self._contact_flag = np.zeros((n_envs, L), dtype=np.uint8)
        self._fault = np.zeros(n_envs, dtype=np.uint8)

    def set_link_mass(self, mass: np.ndarray, inertia: np.ndarray) -> None:
        """Install per-env mass properties (episode randomization)."""
        self.inv_m = 1.0 / mass
        self.inv_i = 1.0 / inertia

    def step(self, state: SimState, applied_torque: np.ndarray, terrain: Terrain,
             dt: float = SUBSTEP_DT) -> tuple[SimState, StepDiagnostics]:
        s = self.settings
        v_before = state.vel.copy()
        q_rate_before = state.joint_rates(self.arrays)
        heights, mu = terrain.heights, terrain.friction
        if heights.shape[0] == 1 and state.n_envs > 1:
            heights = np.broadcast_to(heights, (state.n_envs, heights.shape[1]))
            mu = np.broadcast_to(mu, heights.shape)
        kernels.substep_batch(
            state.pose, state.vel, self.inv_m, self.inv_i, applied_torque,
            heights, mu, terrain.spacing, terrain.x0,
            self.arrays.cap_a, self.arrays.cap_b, self.arrays.radius,
            self.arrays.j_parent, self.arrays.j_child, self.arrays.anchor_p, self.arrays.anchor_c,
            self.arrays.limit_lo, self.arrays.limit_hi,
            dt, self.gravity, s.joint_damping, s.iterations, s.position_iterations,
            s.restitution_iterations,
            s.baumgarte, s.joint_bias, s.slop, s.margin, s.max_correction,
            s.deep_slop, s.max_recovery_velocity,
            state.warm_joint, state.warm_contact,
            self._imp_contact, self._imp_joint, self._contact_flag, self._fault)
        state.time += dt
        diag = StepDiagnostics(
            contact_impulse=self._imp_contact.copy(),
            joint_impulse=self._imp_joint.copy(),
            contact_flag=self._contact_flag.copy(),
            link_accel=(state.vel[:, :, :2] - v_before[:, :, :2]) / dt,
            joint_accel=(state.joint_rates(self.arrays) - q_rate_before) / dt,
            applied_torque=applied_torque.copy(),
            fault=self._fault.copy(),
        )
        return state, diag


def step(model: RobotModel, state: SimState, applied_torque: np.ndarray, terrain: Terrain,
         dt: float = SUBSTEP_DT, settings: SolverSettings | None = None,
         sim: Sim | None = None, gravity: float = GRAVITY) -> tuple[SimState, StepDiagnostics]:
    """One semi-implicit Euler substep with sequential-impulse constraints.

    Convenience wrapper over `Sim.step`; long-lived callers should hold a
    `Sim` to reuse its buffers.
    """
    if sim is None:
        sim = Sim(model, state.n_envs, settings, gravity=gravity)
    return sim.step(state, applied_torque, terrain, dt)


def total_momentum(model: RobotModel, state: SimState) -> tuple[np.ndarray, np.ndarray]:
    """Batch linear momentum (N, 2) and angular momentum about the origin (N,)."""
    a = model.arrays()
    m = a.mass[None, :, None]
    lin = np.sum(m * state.vel[:, :, :2], axis=1)
    spin = np.sum(a.inertia[None, :] * state.vel[:, :, 2], axis=1)
    orbital = np.sum(a.mass[None, :] * (state.pose[:, :, 0] * state.vel[:, :, 1]
                                        - state.pose[:, :, 1] * state.vel[:, :, 0]), axis=1)
    return lin, spin + orbital


def com_state(model: RobotModel, state: SimState) -> tuple[np.ndarray, np.ndarray]:
    """Center of mass position and velocity, (N, 2) each."""
    a = model.arrays()
    w = a.mass[None, :, None] / model.total_mass
    return np.sum(w * state.pose[:, :, :2], axis=1), np.sum(w * state.vel[:, :, :2], axis=1)
