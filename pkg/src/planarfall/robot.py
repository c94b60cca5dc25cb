"""Robot and terrain descriptions for the planar legged manipulator.

The reference robot is a sagittal-plane body: a base capsule, two
two-segment legs (front and hind) and a two-segment arm, all connected by
actuated revolute joints. Models are immutable; per-episode randomization
(mass offsets, friction, actuator lag) is layered on top by the
environment, never written back into the model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class LinkSpec:
    """One rigid link: mass properties plus a collision capsule in the CoM frame."""

    name: str
    mass: float
    inertia: float
    capsule_a: tuple[float, float]
    capsule_b: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class JointSpec:
    """Revolute joint between parent and child links.

    Anchors are expressed in each link's CoM frame. The joint angle is
    child orientation minus parent orientation; `default` is the stance
    angle the action mapping perturbs around.
    """

    name: str
    parent: int
    child: int
    anchor_parent: tuple[float, float]
    anchor_child: tuple[float, float]
    limit_lo: float
    limit_hi: float
    default: float
    actuated: bool = True
    arm: bool = False


@dataclass(frozen=True)
class ActuatorParams:
    """Shared drive parameters: PD gains, torque limit, first-order lag."""

    torque_limit: float
    kp: float
    kd: float
    leg_lag: float
    arm_lag_range: tuple[float, float]


class ModelError(ValueError):
    """Raised for structurally invalid robot or terrain descriptions."""


@dataclass(frozen=True)
class RobotModel:
    links: tuple[LinkSpec, ...]
    joints: tuple[JointSpec, ...]
    actuators: ActuatorParams
    action_scale: float

    def __post_init__(self):
        for link in self.links:
            if link.mass <= 0.0 or link.inertia <= 0.0:
                raise ModelError(f"link {link.name!r}: mass and inertia must be positive")
            if link.radius <= 0.0:
                raise ModelError(f"link {link.name!r}: capsule radius must be positive")
        seen = {0}
        for j in self.joints:
            if not (0 <= j.parent < len(self.links) and 0 <= j.child < len(self.links)):
                raise ModelError(f"joint {j.name!r}: link index out of range")
            if j.parent not in seen:
                raise ModelError(f"joint {j.name!r}: parent link defined after child (not a rooted tree)")
            if j.child in seen:
                raise ModelError(f"joint {j.name!r}: child link {j.child} already attached (not a tree)")
            seen.add(j.child)
            if not (j.limit_lo < j.limit_hi):
                raise ModelError(f"joint {j.name!r}: empty limit interval")
            if not (j.limit_lo <= j.default <= j.limit_hi):
                raise ModelError(f"joint {j.name!r}: default angle outside limits")
        if seen != set(range(len(self.links))):
            raise ModelError("joint graph does not span all links")
        if self.actuators.torque_limit <= 0 or self.actuators.kp < 0 or self.actuators.kd < 0:
            raise ModelError("actuator gains must be non-negative and torque limit positive")
        lo, hi = self.actuators.arm_lag_range
        if not (0 < lo <= hi):
            raise ModelError("arm lag range must be positive and ordered")

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def default_q(self) -> np.ndarray:
        return np.array([j.default for j in self.joints])

    @property
    def actuated_mask(self) -> np.ndarray:
        return np.array([j.actuated for j in self.joints], dtype=bool)

    @property
    def arm_mask(self) -> np.ndarray:
        return np.array([j.arm for j in self.joints], dtype=bool)

    @property
    def total_mass(self) -> float:
        return sum(l.mass for l in self.links)

    def arrays(self) -> "ModelArrays":
        if not hasattr(self, "_arrays"):
            object.__setattr__(self, "_arrays", ModelArrays.from_model(self))
        return self._arrays

    def link_index(self, name: str) -> int:
        for i, l in enumerate(self.links):
            if l.name == name:
                return i
        raise KeyError(name)

    def joint_index(self, name: str) -> int:
        for i, j in enumerate(self.joints):
            if j.name == name:
                return i
        raise KeyError(name)


@dataclass(frozen=True)
class ModelArrays:
    """Flat array view of a RobotModel for the numba kernels."""

    mass: np.ndarray        # (L,)
    inertia: np.ndarray     # (L,)
    cap_a: np.ndarray       # (L, 2)
    cap_b: np.ndarray       # (L, 2)
    radius: np.ndarray      # (L,)
    j_parent: np.ndarray    # (J,) int64
    j_child: np.ndarray     # (J,)
    anchor_p: np.ndarray    # (J, 2)
    anchor_c: np.ndarray    # (J, 2)
    limit_lo: np.ndarray    # (J,)
    limit_hi: np.ndarray    # (J,)

    @staticmethod
    def from_model(model: RobotModel) -> "ModelArrays":
        ls, js = model.links, model.joints
        return ModelArrays(
            mass=np.array([l.mass for l in ls]),
            inertia=np.array([l.inertia for l in ls]),
            cap_a=np.array([l.capsule_a for l in ls]),
            cap_b=np.array([l.capsule_b for l in ls]),
            radius=np.array([l.radius for l in ls]),
            j_parent=np.array([j.parent for j in js], dtype=np.int64),
            j_child=np.array([j.child for j in js], dtype=np.int64),
            anchor_p=np.array([j.anchor_parent for j in js]).reshape(len(js), 2),
            anchor_c=np.array([j.anchor_child for j in js]).reshape(len(js), 2),
            limit_lo=np.array([j.limit_lo for j in js]),
            limit_hi=np.array([j.limit_hi for j in js]),
        )


@dataclass
class Terrain:
    """1D heightfield with per-segment friction.

    `heights` and `friction` carry an optional leading batch axis so a
    batch of environments can each own an independently sampled profile.
    Segment k spans x in [x0 + k*spacing, x0 + (k+1)*spacing); queries
    outside the field clamp to the boundary segments.
    """

    spacing: float
    heights: np.ndarray
    friction: np.ndarray
    x0: float

    def __post_init__(self):
        self.heights = np.atleast_2d(np.asarray(self.heights, dtype=np.float64))
        self.friction = np.atleast_2d(np.asarray(self.friction, dtype=np.float64))
        if self.spacing <= 0:
            raise ModelError("terrain spacing must be positive")
        if self.heights.shape != self.friction.shape:
            raise ModelError("terrain heights and friction shapes differ")
        if np.any(self.friction < 0):
            raise ModelError("friction must be non-negative")

    @staticmethod
    def flat(extent: float = 8.0, spacing: float = 0.25, mu: float = 0.8) -> "Terrain":
        n = int(round(2 * extent / spacing)) + 1
        return Terrain(spacing=spacing, heights=np.zeros(n), friction=np.full(n, mu), x0=-extent)

    @property
    def batch(self) -> int:
        return self.heights.shape[0]

    def height_at(self, x, env: int = 0):
        """Linear interpolation of the surface height, clamped at the ends."""
        h = self.heights[env]
        t = (np.asarray(x, dtype=float) - self.x0) / self.spacing
        k = np.clip(np.floor(t).astype(int), 0, len(h) - 2)
        f = np.clip(t - k, 0.0, 1.0)
        return h[k] * (1 - f) + h[k + 1] * f


# --- reference model -------------------------------------------------------

_SEG = 0.25          # leg/arm segment length
_HALF = _SEG / 2.0


def reference_robot() -> RobotModel:
    """Desk-scale planar base + 2x2-segment legs + 2-segment arm.

    Stance base height with the default joint angles is about 0.46 m;
    the default pose is an X-configuration (front knee back, hind knee
    forward) with the arm stowed above the front of the base.
    """
    links = (
        LinkSpec("base", 10.0, 0.30, (-0.30, 0.0), (0.30, 0.0), 0.08),
        LinkSpec("front_thigh", 1.2, 0.007, (-_HALF, 0.0), (_HALF, 0.0), 0.03),
        LinkSpec("front_shank", 0.8, 0.005, (-_HALF, 0.0), (_HALF, 0.0), 0.03),
        LinkSpec("hind_thigh", 1.2, 0.007, (-_HALF, 0.0), (_HALF, 0.0), 0.03),
        LinkSpec("hind_shank", 0.8, 0.005, (-_HALF, 0.0), (_HALF, 0.0), 0.03),
        LinkSpec("arm_upper", 1.0, 0.006, (-_HALF, 0.0), (_HALF, 0.0), 0.03),
        LinkSpec("arm_fore", 0.7, 0.004, (-_HALF, 0.0), (_HALF, 0.0), 0.025),
    )
    joints = (
        JointSpec("front_hip", 0, 1, (0.25, -0.05), (-_HALF, 0.0), -3.10, -1.40, -2.27),
        JointSpec("front_knee", 1, 2, (_HALF, 0.0), (-_HALF, 0.0), 0.55, 2.25, 1.40),
        JointSpec("hind_hip", 0, 3, (-0.25, -0.05), (-_HALF, 0.0), -1.72, -0.02, -0.87),
        JointSpec("hind_knee", 3, 4, (_HALF, 0.0), (-_HALF, 0.0), -2.25, -0.55, -1.40),
        JointSpec("arm_shoulder", 0, 5, (0.10, 0.08), (-_HALF, 0.0), 0.35, 2.05, 1.20, arm=True),
        JointSpec("arm_elbow", 5, 6, (_HALF, 0.0), (-_HALF, 0.0), -2.85, -1.15, -2.00, arm=True),
    )
    actuators = ActuatorParams(
        torque_limit=35.0, kp=80.0, kd=2.0, leg_lag=0.020, arm_lag_range=(0.005, 0.050)
    )
    return RobotModel(links=links, joints=joints, actuators=actuators, action_scale=0.25)


# --- config file io --------------------------------------------------------

def _read_structured(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    return tomllib.loads(text.decode())


def load_robot(path: str | Path) -> RobotModel:
    """Load a RobotModel from a TOML or JSON config file."""
    doc = _read_structured(path)
    try:
        links = tuple(
            LinkSpec(
                name=d["name"], mass=float(d["mass"]), inertia=float(d["inertia"]),
                capsule_a=tuple(d["capsule_a"]), capsule_b=tuple(d["capsule_b"]),
                radius=float(d["radius"]),
            )
            for d in doc["links"]
        )
        names = {l.name: i for i, l in enumerate(links)}
        joints = tuple(
            JointSpec(
                name=d["name"], parent=names[d["parent"]], child=names[d["child"]],
                anchor_parent=tuple(d["anchor_parent"]), anchor_child=tuple(d["anchor_child"]),
                limit_lo=float(d["limits"][0]), limit_hi=float(d["limits"][1]),
                default=float(d["default"]), actuated=bool(d.get("actuated", True)),
                arm=bool(d.get("arm", False)),
            )
            for d in doc["joints"]
        )
        act = doc["actuators"]
        actuators = ActuatorParams(
            torque_limit=float(act["torque_limit"]), kp=float(act["kp"]), kd=float(act["kd"]),
            leg_lag=float(act["leg_lag"]), arm_lag_range=tuple(act["arm_lag_range"]),
        )
        scale = float(doc["action"]["scale"])
    except KeyError as exc:
        raise ModelError(f"robot config {path}: missing field {exc}") from exc
    return RobotModel(links=links, joints=joints, actuators=actuators, action_scale=scale)


def load_terrain(path: str | Path) -> Terrain:
    doc = _read_structured(path)
    try:
        t = doc["terrain"]
        heights = np.asarray(t["heights"], dtype=float)
        fr = t.get("friction", 0.8)
        friction = np.full_like(heights, float(fr)) if np.isscalar(fr) else np.asarray(fr, dtype=float)
        return Terrain(spacing=float(t["spacing"]), heights=heights, friction=friction,
                       x0=float(t.get("x0", -0.5 * float(t["spacing"]) * (heights.shape[-1] - 1))))
    except KeyError as exc:
        raise ModelError(f"terrain config {path}: missing field {exc}") from exc


def resolve_robot(spec: str | Path) -> RobotModel:
    """Resolve a robot reference: 'builtin:reference' or a config file path."""
    if isinstance(spec, str) and spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if name != "reference":
            raise ModelError(f"unknown builtin robot {name!r}")
        return reference_robot()
    return load_robot(spec)


def reference_robot_path() -> Path:
    return Path(__file__).parent / "data" / "reference_robot.toml"
