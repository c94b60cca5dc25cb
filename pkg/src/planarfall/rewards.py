"""Reward system: three time-gated task terms plus seven always-on behavior
penalties, all scaled by the control interval so episode returns do not
depend on the step rate. Every term is zero while the actuators are still
in the initialization phase, because the policy cannot influence the robot
there.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

TERM_NAMES = (
    "stand_joint_pos",
    "base_height",
    "base_orientation",
    "body_collision",
    "momentum_change",
    "body_yank",
    "action_rate",
    "joint_velocity",
    "torques",
    "acceleration",
)


@dataclass
class RewardWeights:
    """Term scales, sensitivities and targets.

    `q_star` defaults to the robot's default joint position; `h_star` is the
    height above which the height term saturates at its maximum.
    """

    stand_joint_pos: float = 350.0
    base_height: float = 600.0
    base_orientation: float = 120.0
    body_collision: float = -0.2
    momentum_change: float = -5e-3
    body_yank: float = -5e-2
    action_rate: float = -3e-3
    joint_velocity: float = -5e-4
    torques: float = -4e-7
    acceleration: float = -1e-8
    sigma_p: float = 0.5    # rad^2, joint-position sensitivity
    sigma_h: float = 0.01   # m^2, height sensitivity
    h_star: float = 0.415   # m, 0.9 x reference stance height
    q_star: np.ndarray | None = None
    task_multiplier: float = 1.0

    def __post_init__(self):
        for name in ("stand_joint_pos", "base_height", "base_orientation"):
            if getattr(self, name) <= 0:
                raise ValueError(f"task scale {name} must be positive")
        for name in ("body_collision", "momentum_change", "body_yank",
                     "action_rate", "joint_velocity", "torques", "acceleration"):
            if getattr(self, name) >= 0:
                raise ValueError(f"penalty scale {name} must be negative")
        if self.sigma_p <= 0 or self.sigma_h <= 0:
            raise ValueError("sensitivities must be positive")
        if self.q_star is not None:
            self.q_star = np.asarray(self.q_star, dtype=float)

    def task_scales(self) -> np.ndarray:
        return np.array([self.stand_joint_pos, self.base_height, self.base_orientation])

    def penalty_scales(self) -> np.ndarray:
        return np.array([self.body_collision, self.momentum_change, self.body_yank,
                         self.action_rate, self.joint_velocity, self.torques, self.acceleration])


@dataclass
class RewardInputs:
    """Per-control-step quantities the terms are computed from (batched)."""

    q: np.ndarray              # (N, J)
    qdot: np.ndarray           # (N, J)
    qddot: np.ndarray          # (N, J)
    base_height: np.ndarray    # (N,)
    base_pitch: np.ndarray     # (N,)
    contact_impulse: np.ndarray  # (N, L, 2) summed over the control step
    link_accel: np.ndarray     # (N, L, 2) over the control step
    link_force: np.ndarray     # (N, L, 2) m_b * a_b
    prev_force: np.ndarray     # (N, L, 2)
    action: np.ndarray         # (N, J)
    prev_action: np.ndarray    # (N, J)
    torque: np.ndarray         # (N, J) mean applied over the control step


def term_forms(w: RewardWeights, x: RewardInputs, mass: np.ndarray) -> np.ndarray:
    """(N, 10) raw term forms, ungated and unscaled."""
    n_j = x.q.shape[1]
    dq = w.q_star[None, :] - x.q
    joint_form = np.exp(-np.sum(dq * dq, axis=1) / (w.sigma_p * n_j))
    dh = np.maximum(w.h_star - x.base_height, 0.0)
    height_form = np.exp(-dh * dh / w.sigma_h)
    orient_form = np.cos(x.base_pitch)  # -g_b . e_z

    collision = np.sum(x.contact_impulse[:, :, 0] ** 2 + x.contact_impulse[:, :, 1] ** 2, axis=1)
    momentum = np.sum(mass * np.sqrt(x.link_accel[:, :, 0] ** 2 + x.link_accel[:, :, 1] ** 2), axis=1)
    dyank = x.link_force - x.prev_force
    yank = np.sum(dyank[:, :, 0] ** 2 + dyank[:, :, 1] ** 2, axis=1)
    da = x.action - x.prev_action
    action_rate = np.sum(da * da, axis=1)
    joint_vel = np.sum(x.qdot * x.qdot, axis=1)
    torque_sq = np.sum(x.torque * x.torque, axis=1)
    accel = np.sum(x.qddot * x.qddot, axis=1)
    return np.stack([joint_form, height_form, orient_form,
                     collision, momentum, yank, action_rate, joint_vel, torque_sq, accel], axis=1)


def compute_reward(w: RewardWeights, x: RewardInputs, mass: np.ndarray,
                   task_gate: np.ndarray, active: np.ndarray,
                   dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Scalar reward (N,) and the scaled per-term breakdown (N, 10).

    `task_gate` selects steps inside the trailing task window; `active`
    zeroes every term during the initialization phase.
    """
    forms = term_forms(w, x, mass)
    scales = np.concatenate([w.task_scales() * w.task_multiplier, w.penalty_scales()]) * dt
    breakdown = forms * scales[None, :]
    breakdown[:, :3] *= task_gate[:, None]
    breakdown *= active[:, None]
    return breakdown.sum(axis=1), breakdown


def with_variant(w: RewardWeights, task: str, model) -> RewardWeights:
    """Weights specialized to a task variant.

    Resting and self-righting drive toward the folded resting configuration
    with no height requirement; resting additionally prioritizes low joint
    velocity over torque economy.
    """
    if task == "fall_recovery":
        q_star = model.default_q if w.q_star is None else w.q_star
        return replace(w, q_star=q_star)
    if task in ("resting", "self_righting"):
        q_star = resting_pose(model) if w.q_star is None else w.q_star
        out = replace(w, q_star=q_star, h_star=1e-6)
        if task == "resting":
            out = replace(out, joint_velocity=w.joint_velocity * 10.0, torques=w.torques * 0.1)
        return out
    raise ValueError(f"unknown task variant {task!r}")


def resting_pose(model) -> np.ndarray:
    """Folded on-ground configuration: legs tucked, arm stowed."""
    fold = np.array([-3.0, 2.2, -0.1, -2.2, 1.2, -2.6])
    lo = np.array([j.limit_lo for j in model.joints])
    hi = np.array([j.limit_hi for j in model.joints])
    if model.n_joints != fold.shape[0]:
        return model.default_q
    return np.clip(fold, lo, hi)
