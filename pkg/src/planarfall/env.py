"""The falling-and-recovery MDP.

A `FallEnv` steps a batch of independent episodes: randomized fall
initialization with a disabled-actuator period, policy actions mapped to
joint position targets, two physics substeps per control step, the gated
reward system, and fixed-length episodes that only terminate at the
horizon (or on a solver fault, which carries a fixed penalty).

Each env instance owns one RNG stream; a batch stepped together produces
the same per-env results as the envs stepped alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels, rewards as rew
from .robot import RobotModel, Terrain
from .sim import (
    SUBSTEP_DT, Sim, SimState, SolverSettings, actuate, forward_kinematics,
    lag_alpha, link_velocities, pd_torque,
)

TASKS = ("fall_recovery", "resting", "self_righting")
ACTOR_BASE_DIM = 21  # gravity (2) + base omega (1) + q (6) + qdot (6) + prev action (6)
PRIV_DIM = 6         # base velocity (2) + base height (1) + contact flags (3)
MDP_DIM = 3          # remaining time, actuator-active flag, remaining init time


class ConfigError(ValueError):
    """Raised for invalid episode configurations."""


@dataclass
class EpisodeConfig:
    horizon: float = 6.0
    control_dt: float = 0.01
    init_min: float = 0.04
    init_max: float = 1.50
    task_window: float = 2.0
    base_mass_delta: float = 0.10          # fraction of base mass
    friction_range: tuple[float, float] = (0.4, 1.0)
    terrain_amplitude: float = 0.015       # m
    terrain_spacing: float = 0.08
    terrain_extent: float = 6.0
    noise_gravity: float = 0.03
    noise_omega: float = 0.10
    noise_qpos: float = 0.05
    noise_qvel: float = 0.20
    noise_scale: float = 1.0               # 0 disables actor observation noise
    task: str = "fall_recovery"
    arm_frozen: bool = False
    obs_config: int = 2
    h_success: float = 0.415
    success_qdot: float = 0.01             # rad/s
    init_height: tuple[float, float] = (0.3, 0.8)
    init_base_x: tuple[float, float] = (-0.3, 0.3)
    init_pitch: tuple[float, float] = (-np.pi, np.pi)
    init_base_vel: float = 0.5             # m/s uniform half-width
    init_base_omega: float = 1.0
    init_joint_vel: float = 1.0
    self_righting_init: float = 2.0
    action_clip: float = 3.0
    fault_penalty: float = -200.0
    reset_clearance: float = 0.01          # m, lift applied to penetrating resets

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.obs_config not in (1, 2, 3, 4):
            raise ConfigError("obs_config must be 1..4")
        init_cap = self.self_righting_init if self.task == "self_righting" else self.init_max
        if self.horizon <= init_cap + self.task_window:
            raise ConfigError("horizon must exceed max init period plus the task window")
        steps = round(self.horizon / self.control_dt)
        if abs(steps * self.control_dt - self.horizon) > 1e-9:
            raise ConfigError("control_dt must divide the horizon")
        if self.init_min > self.init_max or self.init_min <= 0:
            raise ConfigError("invalid init period range")

    @property
    def steps_per_episode(self) -> int:
        return round(self.horizon / self.control_dt)

    @property
    def substeps(self) -> int:
        n = round(self.control_dt / SUBSTEP_DT)
        if abs(n * SUBSTEP_DT - self.control_dt) > 1e-12:
            raise ConfigError("control_dt must be a multiple of the physics substep")
        return n

    def actor_dim(self) -> int:
        if self.obs_config == 3:
            return ACTOR_BASE_DIM + 1
        if self.obs_config == 4:
            return ACTOR_BASE_DIM + PRIV_DIM + MDP_DIM
        return ACTOR_BASE_DIM

    def critic_dim(self) -> int:
        if self.obs_config == 1:
            return ACTOR_BASE_DIM
        return ACTOR_BASE_DIM + PRIV_DIM + MDP_DIM


def apply_action(action: np.ndarray, model: RobotModel, arm_frozen: bool = False,
                 action_clip: float = 3.0) -> np.ndarray:
    """Joint position targets: clamp(s * clip(a) + q_default, joint limits).

    With a frozen arm, the arm targets pin to the default arm pose no
    matter what the action says.
    """
    a = model.arrays()
    act = np.clip(np.atleast_2d(action), -action_clip, action_clip)
    target = model.action_scale * act + model.default_q[None, :]
    np.clip(target, a.limit_lo[None, :], a.limit_hi[None, :], out=target)
    if arm_frozen:
        arm = model.arm_mask
        target[:, arm] = model.default_q[arm]
    return target


def is_success(base_height: np.ndarray, joint_rates: np.ndarray,
               h_success: float, qdot_limit: float = 0.01) -> np.ndarray:
    """Recovery success at the final step: base strictly above the height
    threshold with every joint essentially still."""
    return (base_height > h_success) & (np.abs(joint_rates).max(axis=-1) < qdot_limit)


def obs_scales(cfg: EpisodeConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fixed per-channel input scaling for the actor and critic networks.

    Purely a conditioning transform on the network inputs; the observation
    contents themselves are unscaled.
    """
    o_s = np.concatenate([np.ones(2), [0.25], np.ones(6), np.full(6, 0.05), np.ones(6)])
    priv = np.array([0.5, 0.5, 1.0, 1.0, 1.0, 1.0])
    mdp = np.array([1.0 / cfg.horizon, 1.0, 1.0 / max(cfg.init_max, cfg.self_righting_init)])
    tail = np.concatenate([priv, mdp])
    critic = o_s if cfg.obs_config == 1 else np.concatenate([o_s, tail])
    if cfg.obs_config == 3:
        actor = np.concatenate([o_s, [1.0 / cfg.horizon]])
    elif cfg.obs_config == 4:
        actor = np.concatenate([o_s, tail])
    else:
        actor = o_s
    return actor, critic


@dataclass
class StepResult:
    reward: np.ndarray          # (N,)
    done: np.ndarray            # (N,) bool
    breakdown: np.ndarray       # (N, 10) scaled term values
    base_impulse: np.ndarray    # (N,) contact impulse magnitude on the base
    base_accel: np.ndarray      # (N,) |base linear acceleration|
    internal_peak: np.ndarray   # (N,) max joint internal force this step
    base_height: np.ndarray     # (N,)
    torque_abs: np.ndarray      # (N, J) mean |applied torque|
    fault: np.ndarray           # (N,) bool
    final_success: np.ndarray | None = None   # (N,) valid where done
    final_return: np.ndarray | None = None


class FallEnv:
    """A batch of independent fall/recovery episodes."""

    def __init__(self, model: RobotModel, config: EpisodeConfig,
                 weights: rew.RewardWeights, n_envs: int, seed: int = 0,
                 settings: SolverSettings | None = None, auto_reset: bool = True):
        self.model = model
        self.cfg = config
        self.weights = rew.with_variant(weights, config.task, model)
        self.n_envs = n_envs
        self.auto_reset = auto_reset
        self.arrays = model.arrays()
        self.sim = Sim(model, n_envs, settings)
        self.state = SimState.zeros(n_envs, model)
        self._rngs = [np.random.Generator(np.random.PCG64(ss))
                      for ss in np.random.SeedSequence(seed).spawn(n_envs)]

        L, J = model.n_links, model.n_joints
        n_seg = int(round(2 * config.terrain_extent / config.terrain_spacing)) + 1
        self.terrain = Terrain(
            spacing=config.terrain_spacing,
            heights=np.zeros((n_envs, n_seg)),
            friction=np.full((n_envs, n_seg), 0.8),
            x0=-config.terrain_extent,
        )
        self._mass = np.tile(self.arrays.mass, (n_envs, 1))
        self._inertia = np.tile(self.arrays.inertia, (n_envs, 1))
        self._lag_alpha = np.zeros((n_envs, J))
        self._init_steps = np.zeros(n_envs, dtype=np.int64)
        self._elapsed = np.zeros(n_envs, dtype=np.int64)
        self._prev_action = np.zeros((n_envs, J))
        self._prev_force = np.zeros((n_envs, L, 2))
        self._stance_target = np.tile(model.default_q, (n_envs, 1))
        self._contact_flags = np.zeros((n_envs, L), dtype=np.uint8)
        self._episode_return = np.zeros(n_envs)
        self._limits_lo = self.arrays.limit_lo
        self._limits_hi = self.arrays.limit_hi
        self._leg_joints = ~model.arm_mask
        self._diag_writer = None
        self.reset_all()

    # --- episode setup -----------------------------------------------------

    def reset_all(self) -> None:
        for i in range(self.n_envs):
            self.reset_env(i)

    def reseed(self, i: int, seed_seq: np.random.SeedSequence) -> None:
        """Install a fresh RNG stream before a reset (paired evaluation)."""
        self._rngs[i] = np.random.Generator(np.random.PCG64(seed_seq))

    def reset_env(self, i: int) -> None:
        cfg, rng = self.cfg, self._rngs[i]
        if cfg.task == "self_righting":
            dur = cfg.self_righting_init
        else:
            dur = rng.uniform(cfg.init_min, cfg.init_max)
        self._init_steps[i] = max(1, round(dur / cfg.control_dt))
        self._elapsed[i] = 0

        base = np.array([
            rng.uniform(*cfg.init_base_x),
            rng.uniform(*cfg.init_height),
            rng.uniform(*cfg.init_pitch),
        ])
        q0 = rng.uniform(self._limits_lo, self._limits_hi)
        pose = forward_kinematics(self.model, base[None, :], q0[None, :])[0]
        base_vel = rng.uniform(-1, 1, 3) * np.array([
            cfg.init_base_vel, cfg.init_base_vel, cfg.init_base_omega])
        qdot0 = rng.uniform(-cfg.init_joint_vel, cfg.init_joint_vel, self.model.n_joints)
        vel = link_velocities(self.model, pose[None], base_vel[None], qdot0[None])[0]

        # terrain and per-episode randomization
        n_seg = self.terrain.heights.shape[1]
        raw = rng.uniform(-cfg.terrain_amplitude, cfg.terrain_amplitude, n_seg)
        kernel = np.ones(3) / 3.0
        self.terrain.heights[i] = np.convolve(raw, kernel, mode="same")
        self.terrain.friction[i] = rng.uniform(*cfg.friction_range)

        scale = 1.0 + rng.uniform(-cfg.base_mass_delta, cfg.base_mass_delta)
        self._mass[i] = self.arrays.mass
        self._inertia[i] = self.arrays.inertia
        self._mass[i, 0] *= scale
        self._inertia[i, 0] *= scale
        self.sim.inv_m[i] = 1.0 / self._mass[i]
        self.sim.inv_i[i] = 1.0 / self._inertia[i]

        act = self.model.actuators
        lag = np.full(self.model.n_joints, act.leg_lag)
        arm = self.model.arm_mask
        lag[arm] = rng.uniform(*act.arm_lag_range, size=int(arm.sum()))
        self._lag_alpha[i] = np.clip(SUBSTEP_DT / np.maximum(lag, SUBSTEP_DT), 0.0, 1.0)

        # drop the robot in with a small clearance if the sampled pose penetrates
        clearance = self._min_clearance(pose, i)
        if clearance < cfg.reset_clearance:
            pose[:, 1] += cfg.reset_clearance - clearance

        self.state.pose[i] = pose
        self.state.vel[i] = vel
        self.state.reset_env(i)
        self._prev_action[i] = 0.0
        self._prev_force[i] = 0.0
        self._episode_return[i] = 0.0
        if cfg.task == "resting":
            self._stance_target[i] = rng.uniform(self._limits_lo, self._limits_hi)
        con = np.empty((1, 2 * self.model.n_links, kernels._CONTACT_COLS))
        kernels.detect_batch(pose[None], self.arrays.cap_a, self.arrays.cap_b,
                             self.arrays.radius, self.terrain.heights[i][None],
                             self.terrain.friction[i][None], self.terrain.spacing,
                             self.terrain.x0, self.sim.settings.margin, con)
        self._contact_flags[i] = (con[0, ::2, 10] + con[0, 1::2, 10]) > 0

    def _min_clearance(self, pose: np.ndarray, i: int) -> float:
        a = self.arrays
        worst = np.inf
        for l in range(self.model.n_links):
            c, s = np.cos(pose[l, 2]), np.sin(pose[l, 2])
            for cap in (a.cap_a[l], a.cap_b[l]):
                ex = pose[l, 0] + c * cap[0] - s * cap[1]
                ez = pose[l, 1] + s * cap[0] + c * cap[1]
                worst = min(worst, ez - a.radius[l] - float(self.terrain.height_at(ex, env=i)))
        return worst

    # --- observations --------------------------------------------------------

    def _state_features(self) -> np.ndarray:
        th = self.state.pose[:, 0, 2]
        q = self.state.joint_angles(self.arrays)
        qd = self.state.joint_rates(self.arrays)
        return np.column_stack([
            np.sin(th), -np.cos(th),
            self.state.vel[:, 0, 2],
            q, qd,
            self._prev_action,
        ])

    def _priv_mdp_features(self) -> np.ndarray:
        cfg = self.cfg
        t = self._elapsed * cfg.control_dt
        remaining = cfg.horizon - t
        init_remaining = np.maximum(self._init_steps - self._elapsed, 0) * cfg.control_dt
        active = (self._elapsed >= self._init_steps).astype(float)
        foot_f = self._contact_flags[:, self.model.link_index("front_shank")]
        foot_h = self._contact_flags[:, self.model.link_index("hind_shank")]
        base_c = self._contact_flags[:, 0]
        return np.column_stack([
            self.state.vel[:, 0, 0], self.state.vel[:, 0, 1],
            self.state.pose[:, 0, 1],
            foot_f.astype(float), foot_h.astype(float), base_c.astype(float),
            remaining, active, init_remaining,
        ])

    def observe_actor(self) -> np.ndarray:
        """Noisy policy observation per the configured layout."""
        cfg = self.cfg
        obs = self._state_features()
        if cfg.noise_scale > 0:
            stds = np.concatenate([
                np.full(2, cfg.noise_gravity),
                [cfg.noise_omega],
                np.full(6, cfg.noise_qpos),
                np.full(6, cfg.noise_qvel),
            ]) * cfg.noise_scale
            noise = np.stack([r.standard_normal(15) for r in self._rngs])
            obs[:, :15] += noise * stds[None, :]
        if cfg.obs_config == 3:
            remaining = cfg.horizon - self._elapsed * cfg.control_dt
            obs = np.column_stack([obs, remaining])
        elif cfg.obs_config == 4:
            obs = np.column_stack([obs, self._priv_mdp_features()])
        return obs

    def observe_critic(self) -> np.ndarray:
        """Noiseless critic observation; configs 2-4 append the privileged
        and MDP features."""
        obs = self._state_features()
        if self.cfg.obs_config == 1:
            return obs
        return np.column_stack([obs, self._priv_mdp_features()])

    # --- stepping ------------------------------------------------------------

    def enable_diagnostics_csv(self, path: str | Path) -> None:
        """Stream env 0's per-term reward breakdown to a CSV file."""
        f = open(path, "w", newline="")
        self._diag_writer = (csv.writer(f), f)
        self._diag_writer[0].writerow(("t",) + rew.TERM_NAMES)

    def control_step(self, action: np.ndarray | None = None, torque_fn=None) -> StepResult:
        """Advance every env one control interval.

        Either `action` (policy path: targets through the PD controller) or
        `torque_fn(q, qdot) -> raw torques` (baseline controllers) drives
        the step; both routes share the lag filter, the disabled-actuator
        protocol and the reward bookkeeping.
        """
        cfg, model = self.cfg, self.model
        n, J, L = self.n_envs, model.n_joints, model.n_links
        act_params = model.actuators

        if torque_fn is None:
            a = np.clip(np.asarray(action, dtype=np.float64), -cfg.action_clip, cfg.action_clip)
            targets = apply_action(a, model, cfg.arm_frozen, cfg.action_clip)
        else:
            a = np.zeros((n, J))
            targets = None
        active = self._elapsed >= self._init_steps
        if cfg.task == "resting":
            torque_on = np.ones(n, dtype=bool)
            if targets is not None:
                # init period drives toward the sampled stance instead of dropping
                hold = ~active
                targets[hold] = self._stance_target[hold]
        else:
            torque_on = active

        v_start = self.state.vel.copy()
        qd_start = self.state.joint_rates(self.arrays)

        imp = np.zeros((n, L, 2))
        flags = np.zeros((n, L), dtype=np.uint8)
        internal = np.zeros((n, J))
        torque_sum = np.zeros((n, J))
        fault = np.zeros(n, dtype=bool)
        on = torque_on.astype(float)
        for _ in range(cfg.substeps):
            q = self.state.joint_angles(self.arrays)
            qd = self.state.joint_rates(self.arrays)
            if torque_fn is None:
                raw = pd_torque(targets, q, qd, act_params.kp, act_params.kd,
                                act_params.torque_limit)
            else:
                raw = torque_fn(q, qd)
            applied = actuate(self.state, raw, self._lag_alpha, act_params.torque_limit, active=on)
            self.state, diag = self.sim.step(self.state, applied, self.terrain)
            imp += diag.contact_impulse
            flags |= diag.contact_flag
            internal = np.maximum(internal, diag.joint_internal_force())
            torque_sum += np.abs(applied)
            fault |= diag.fault.astype(bool)

        self._elapsed += 1
        self._contact_flags = flags
        t = self._elapsed * cfg.control_dt

        accel = (self.state.vel[:, :, :2] - v_start[:, :, :2]) / cfg.control_dt
        force = self._mass[:, :, None] * accel
        qdd = (self.state.joint_rates(self.arrays) - qd_start) / cfg.control_dt
        inputs = rew.RewardInputs(
            q=self.state.joint_angles(self.arrays),
            qdot=self.state.joint_rates(self.arrays),
            qddot=qdd,
            base_height=self.state.pose[:, 0, 1],
            base_pitch=self.state.pose[:, 0, 2],
            contact_impulse=imp,
            link_accel=accel,
            link_force=force,
            prev_force=self._prev_force,
            action=a,
            prev_action=self._prev_action,
            torque=torque_sum / cfg.substeps,
        )
        task_gate = ((cfg.horizon - t) <= cfg.task_window + 1e-12).astype(float)
        reward, breakdown = rew.compute_reward(
            self.weights, inputs, self._mass, task_gate, active.astype(float), cfg.control_dt)

        reward = np.where(fault, reward + cfg.fault_penalty, reward)
        self._episode_return += reward
        self._prev_force = force
        self._prev_action = a

        done = fault | (self._elapsed >= cfg.steps_per_episode)
        result = StepResult(
            reward=reward,
            done=done,
            breakdown=breakdown,
            base_impulse=np.hypot(imp[:, 0, 0], imp[:, 0, 1]),
            base_accel=np.hypot(accel[:, 0, 0], accel[:, 0, 1]),
            internal_peak=internal.max(axis=1),
            base_height=self.state.pose[:, 0, 1].copy(),
            torque_abs=torque_sum / cfg.substeps,
            fault=fault,
        )
        if self._diag_writer is not None:
            self._diag_writer[0].writerow(
                [float(t[0])] + [float(v) for v in breakdown[0]])

        if done.any():
            success = is_success(self.state.pose[:, 0, 1],
                                 self.state.joint_rates(self.arrays),
                                 cfg.h_success, cfg.success_qdot)
            success &= ~fault
            result.final_success = np.where(done, success, False)
            result.final_return = self._episode_return.copy()
            if self.auto_reset:
                for i in np.flatnonzero(done):
                    self.reset_env(i)
        return result

    def draw_action_noise(self, dim: int) -> np.ndarray:
        """(N, dim) standard normals from the per-env streams, so sampled
        actions stay deterministic per instance regardless of batching."""
        return np.stack([r.standard_normal(dim) for r in self._rngs])

    @property
    def elapsed_steps(self) -> np.ndarray:
        return self._elapsed.copy()

    @property
    def init_steps(self) -> np.ndarray:
        return self._init_steps.copy()

    def close(self) -> None:
        if self._diag_writer is not None:
            self._diag_writer[1].close()
            self._diag_writer = None
