"""planarfall: fall damage reduction and recovery training for a planar
legged mobile manipulator.

Batched rigid-body simulation, a finite-horizon falling/recovery MDP with
time-gated task rewards, an asymmetric actor-critic PPO trainer, baseline
emergency controllers and the evaluation/ablation suite, all behind one CLI.
"""

__version__ = "0.1.0"

from .robot import RobotModel, Terrain, reference_robot  # noqa: F401
