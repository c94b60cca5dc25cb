import numpy as np
import pytest

from planarfall.robot import (
    ActuatorParams, JointSpec, LinkSpec, ModelError, RobotModel, Terrain,
    load_robot, load_terrain, reference_robot, reference_robot_path, resolve_robot,
)

ACT = ActuatorParams(torque_limit=10.0, kp=5.0, kd=0.5, leg_lag=0.02, arm_lag_range=(0.01, 0.02))


def test_reference_model_structure(robot):
    assert robot.n_links == 7
    assert robot.n_joints == 6
    assert robot.actuated_mask.sum() == 6
    assert robot.arm_mask.sum() == 2
    for j in robot.joints:
        assert j.limit_lo <= j.default <= j.limit_hi


def test_reference_config_file_matches_builtin(robot):
    loaded = load_robot(reference_robot_path())
    assert loaded == robot
    assert resolve_robot("builtin:reference") == robot


def test_rejects_nonpositive_mass():
    with pytest.raises(ModelError):
        RobotModel(
            links=(LinkSpec("a", 0.0, 1.0, (0, 0), (1, 0), 0.1),),
            joints=(), actuators=ACT, action_scale=0.25,
        )


def test_rejects_default_outside_limits():
    links = (
        LinkSpec("a", 1.0, 1.0, (0, 0), (1, 0), 0.1),
        LinkSpec("b", 1.0, 1.0, (0, 0), (1, 0), 0.1),
    )
    with pytest.raises(ModelError):
        RobotModel(
            links=links,
            joints=(JointSpec("j", 0, 1, (0, 0), (0, 0), -1.0, 1.0, 2.0),),
            actuators=ACT, action_scale=0.25,
        )


def test_rejects_cyclic_joint_graph():
    links = (
        LinkSpec("a", 1.0, 1.0, (0, 0), (1, 0), 0.1),
        LinkSpec("b", 1.0, 1.0, (0, 0), (1, 0), 0.1),
    )
    with pytest.raises(ModelError):
        RobotModel(
            links=links,
            joints=(
                JointSpec("j1", 0, 1, (0, 0), (0, 0), -1, 1, 0.0),
                JointSpec("j2", 1, 1, (0, 0), (0, 0), -1, 1, 0.0),
            ),
            actuators=ACT, action_scale=0.25,
        )


def test_terrain_validation():
    with pytest.raises(ModelError):
        Terrain(spacing=0.0, heights=np.zeros(4), friction=np.ones(4), x0=0.0)
    with pytest.raises(ModelError):
        Terrain(spacing=0.1, heights=np.zeros(4), friction=-np.ones(4), x0=0.0)


def test_terrain_height_interpolation():
    t = Terrain(spacing=1.0, heights=np.array([0.0, 1.0, 1.0]), friction=np.ones(3), x0=0.0)
    assert t.height_at(0.5) == pytest.approx(0.5)
    assert t.height_at(-3.0) == pytest.approx(0.0)   # clamped
    assert t.height_at(10.0) == pytest.approx(1.0)


def test_terrain_file_round_trip(tmp_path):
    p = tmp_path / "terrain.toml"
    p.write_text("[terrain]\nspacing = 0.5\nheights = [0.0, 0.1, 0.0]\nfriction = 0.6\n")
    t = load_terrain(p)
    assert t.spacing == 0.5
    assert t.friction[0, 1] == 0.6
    assert t.heights.shape == (1, 3)


def test_robot_json_config(tmp_path, robot):
    import json

    doc = {
        "links": [
            {"name": l.name, "mass": l.mass, "inertia": l.inertia,
             "capsule_a": list(l.capsule_a), "capsule_b": list(l.capsule_b), "radius": l.radius}
            for l in robot.links
        ],
        "joints": [
            {"name": j.name, "parent": robot.links[j.parent].name, "child": robot.links[j.child].name,
             "anchor_parent": list(j.anchor_parent), "anchor_child": list(j.anchor_child),
             "limits": [j.limit_lo, j.limit_hi], "default": j.default,
             "actuated": j.actuated, "arm": j.arm}
            for j in robot.joints
        ],
        "actuators": {"torque_limit": robot.actuators.torque_limit, "kp": robot.actuators.kp,
                      "kd": robot.actuators.kd, "leg_lag": robot.actuators.leg_lag,
                      "arm_lag_range": list(robot.actuators.arm_lag_range)},
        "action": {"scale": robot.action_scale},
    }
    p = tmp_path / "robot.json"
    p.write_text(json.dumps(doc))
    assert load_robot(p) == robot
