import numpy as np
import pytest

from planarfall.robot import ActuatorParams, JointSpec, LinkSpec, RobotModel, Terrain, reference_robot

_ACT = ActuatorParams(torque_limit=30.0, kp=50.0, kd=1.0, leg_lag=0.02, arm_lag_range=(0.005, 0.05))


@pytest.fixture(scope="session")
def robot():
    return reference_robot()


@pytest.fixture(scope="session")
def flat_terrain():
    return Terrain.flat(extent=10.0, spacing=0.25, mu=0.8)


def single_link_model(mass=2.0, inertia=0.05, half=0.2, radius=0.05):
    """One free capsule, no joints."""
    return RobotModel(
        links=(LinkSpec("body", mass, inertia, (-half, 0.0), (half, 0.0), radius),),
        joints=(),
        actuators=_ACT,
        action_scale=0.25,
    )


def pendulum_model(length=0.6, mass=1.0, radius=0.02):
    """Huge pivot block with one rod hanging from its center."""
    return RobotModel(
        links=(
            LinkSpec("pivot", 1e8, 1e8, (-0.1, 0.0), (0.1, 0.0), 0.05),
            LinkSpec("rod", mass, mass * length ** 2 / 12.0, (-length / 2, 0.0), (length / 2, 0.0), radius),
        ),
        joints=(
            JointSpec("hinge", 0, 1, (0.0, 0.0), (-length / 2, 0.0), -6.4, 6.4, 0.0),
        ),
        actuators=_ACT,
        action_scale=0.25,
    )


def chain_model(m1=1.5, m2=0.9, length=0.4, radius=0.02):
    """Tall heavy ground block with a two-link chain hanging off its side.

    The block rests with its CoM 1 m up, the chain anchor sits at
    (1.2, 0) in block coordinates, so both links hang clear of the ground.
    """
    half = length / 2
    return RobotModel(
        links=(
            LinkSpec("block", 200.0, 40.0, (-0.5, 0.0), (0.5, 0.0), 1.0),
            LinkSpec("upper", m1, m1 * length ** 2 / 12.0, (-half, 0.0), (half, 0.0), radius),
            LinkSpec("lower", m2, m2 * length ** 2 / 12.0, (-half, 0.0), (half, 0.0), radius),
        ),
        joints=(
            JointSpec("top", 0, 1, (1.2, 0.0), (-half, 0.0), -6.4, 6.4, 0.0),
            JointSpec("bottom", 1, 2, (half, 0.0), (-half, 0.0), -6.4, 6.4, 0.0),
        ),
        actuators=_ACT,
        action_scale=0.25,
    )


def anchor_errors(model, state):
    """(N, J) joint anchor coincidence error magnitudes."""
    a = model.arrays()
    out = np.empty((state.pose.shape[0], model.n_joints))
    for j in range(model.n_joints):
        p, c = a.j_parent[j], a.j_child[j]
        cp, sp = np.cos(state.pose[:, p, 2]), np.sin(state.pose[:, p, 2])
        cc, sc = np.cos(state.pose[:, c, 2]), np.sin(state.pose[:, c, 2])
        pax = state.pose[:, p, 0] + cp * a.anchor_p[j, 0] - sp * a.anchor_p[j, 1]
        paz = state.pose[:, p, 1] + sp * a.anchor_p[j, 0] + cp * a.anchor_p[j, 1]
        cax = state.pose[:, c, 0] + cc * a.anchor_c[j, 0] - sc * a.anchor_c[j, 1]
        caz = state.pose[:, c, 1] + sc * a.anchor_c[j, 0] + cc * a.anchor_c[j, 1]
        out[:, j] = np.hypot(pax - cax, paz - caz)
    return out


def endpoint_heights(model, state, terrain):
    """(N, 2L) signed clearance of every capsule endpoint above the surface."""
    a = model.arrays()
    N, L = state.pose.shape[0], model.n_links
    out = np.empty((N, 2 * L))
    for l in range(L):
        c, s = np.cos(state.pose[:, l, 2]), np.sin(state.pose[:, l, 2])
        for e, cap in enumerate((a.cap_a[l], a.cap_b[l])):
            ex = state.pose[:, l, 0] + c * cap[0] - s * cap[1]
            ez = state.pose[:, l, 1] + s * cap[0] + c * cap[1]
            for n in range(N):
                h = terrain.height_at(ex[n], env=n if terrain.batch > 1 else 0)
                out[n, 2 * l + e] = ez[n] - a.radius[l] - h
    return out


def settle_pose(model, base_pose, q=None):
    """FK pose array for one env, lifted so nothing starts penetrating."""
    from planarfall.sim import forward_kinematics

    q = model.default_q if q is None else q
    pose = forward_kinematics(model, np.asarray(base_pose, dtype=float)[None, :], q[None, :])
    return pose
