"""Baseline emergency controllers: freeze (stiff PD hold of the pose at the
controller-switch instant) and damp (pure viscous joint damping)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .robot import RobotModel

BASELINE_KINDS = ("freeze", "damp")


@dataclass
class BaselineController:
    kind: str
    kp: float
    kd: float
    k_damp: float
    torque_limit: float
    name: str = ""

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if not self.name:
            self.name = self.kind
        self._q_captured = None

    @staticmethod
    def freeze(model: RobotModel, name: str = "freeze") -> "BaselineController":
        act = model.actuators
        return BaselineController("freeze", kp=act.kp, kd=act.kd, k_damp=0.0,
                                  torque_limit=act.torque_limit, name=name)

    @staticmethod
    def damp(model: RobotModel, k_damp: float = 2.0, name: str = "damp") -> "BaselineController":
        act = model.actuators
        return BaselineController("damp", kp=0.0, kd=0.0, k_damp=k_damp,
                                  torque_limit=act.torque_limit, name=name)

    def begin_episodes(self, n_envs: int, n_joints: int) -> None:
        self._q_captured = np.zeros((n_envs, n_joints))
        self._captured_mask = np.zeros(n_envs, dtype=bool)

    def on_switch(self, idx: np.ndarray, q: np.ndarray) -> None:
        """Record the hold pose for envs whose actuators just engaged."""
        if len(idx):
            self._q_captured[idx] = q[idx]
            self._captured_mask[idx] = True

    def torques(self, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
        return baseline_act(self, q, qdot, self._q_captured)


def baseline_act(controller: BaselineController, q: np.ndarray, qdot: np.ndarray,
                 q_captured: np.ndarray | None = None) -> np.ndarray:
    """Raw joint torques for a baseline controller, clamped to the drive limit."""
    if controller.kind == "freeze":
        if q_captured is None:
            q_captured = q
        tau = controller.kp * (q_captured - q) - controller.kd * qdot
    else:
        tau = -controller.k_damp * qdot
    return np.clip(tau, -controller.torque_limit, controller.torque_limit)
