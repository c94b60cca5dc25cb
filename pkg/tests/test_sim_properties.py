"""Property suite for the rigid-body core: ballistic accuracy, conservation,
friction cone, penetration bounds, restitution, determinism."""

import numpy as np

from planarfall.robot import Terrain
from planarfall.sim import (
    GRAVITY, SUBSTEP_DT, Sim, SimState, com_state, forward_kinematics,
    link_velocities, total_momentum,
)

from conftest import anchor_errors, endpoint_heights, single_link_model


def random_drop_state(robot, rng, n_envs, z_range=(0.3, 0.8)):
    lo = np.array([j.limit_lo for j in robot.joints])
    hi = np.array([j.limit_hi for j in robot.joints])
    base = np.stack([
        rng.uniform(-0.5, 0.5, n_envs),
        rng.uniform(*z_range, n_envs),
        rng.uniform(-np.pi, np.pi, n_envs),
    ], axis=1)
    q = rng.uniform(lo, hi, (n_envs, robot.n_joints))
    st = SimState.zeros(n_envs, robot)
    st.pose[:] = forward_kinematics(robot, base, q)
    st.vel[:, 0, :] = rng.uniform(-0.5, 0.5, (n_envs, 3))
    return st


def test_ballistic_matches_discrete_projectile(robot, flat_terrain):
    # oracle: exact closed form of the semi-implicit scheme for the CoM,
    # v_n = v0 + n g dt, x_n = x0 + n dt v0 + g dt^2 n(n+1)/2
    rng = np.random.default_rng(11)
    st = SimState.zeros(1, robot)
    st.pose[:] = forward_kinematics(robot, np.array([[0.0, 60.0, 0.8]]), robot.default_q[None])
    st.vel[:] = link_velocities(robot, st.pose, rng.uniform(-1, 1, (1, 3)), rng.uniform(-2, 2, (1, 6)))
    com0, v0 = com_state(robot, st)
    sim = Sim(robot, 1)
    n_steps = 200  # 1 simulated second
    for _ in range(n_steps):
        st, _ = sim.step(st, np.zeros((1, 6)), flat_terrain)
    com1, _ = com_state(robot, st)
    n = n_steps
    expected_x = com0[0, 0] + n * SUBSTEP_DT * v0[0, 0]
    expected_z = com0[0, 1] + n * SUBSTEP_DT * v0[0, 1] - GRAVITY * SUBSTEP_DT ** 2 * n * (n + 1) / 2
    assert abs(com1[0, 0] - expected_x) < 1e-6
    assert abs(com1[0, 1] - expected_z) < 1e-6


def test_momentum_conservation_drift(robot, flat_terrain):
    rng = np.random.default_rng(3)
    st = SimState.zeros(4, robot)
    st.pose[:] = forward_kinematics(
        robot, np.column_stack([rng.uniform(-1, 1, 4), np.full(4, 80.0), rng.uniform(-3, 3, 4)]),
        np.tile(robot.default_q, (4, 1)))
    st.vel[:] = link_velocities(robot, st.pose, rng.uniform(-1, 1, (4, 3)), rng.uniform(-2, 2, (4, 6)))
    sim = Sim(robot, 4, gravity=0.0)
    sim.settings.joint_damping = 0.0
    lin_p, ang_p = total_momentum(robot, st)
    for _ in range(500):
        st, _ = sim.step(st, np.zeros((4, 6)), flat_terrain)
        lin, ang = total_momentum(robot, st)
        assert np.abs(lin - lin_p).max() < 1e-8
        assert np.abs(ang - ang_p).max() < 1e-8
        lin_p, ang_p = lin, ang


def test_friction_cone_on_random_contact_steps(robot):
    # 10^4 contact-step samples: for every endpoint slot with an active
    # contact, |tangent impulse| <= mu * normal impulse + 1e-10 and the
    # normal impulse is non-negative
    rng = np.random.default_rng(21)
    n_envs = 24
    mu = 0.7
    terr = Terrain(spacing=0.2, heights=np.tile(rng.uniform(-0.05, 0.05, 120), (n_envs, 1)),
                   friction=np.full((n_envs, 120), mu), x0=-12.0)
    st = random_drop_state(robot, rng, n_envs)
    sim = Sim(robot, n_envs)
    checked = 0
    steps = 0
    while checked < 10_000 and steps < 3000:
        tau = rng.uniform(-20, 20, (n_envs, 6))
        st, diag = sim.step(st, tau, terr)
        steps += 1
        wc = st.warm_contact
        active = np.abs(wc).sum(axis=2) > 0
        checked += int(active.sum())
        assert np.all(wc[:, :, 0] >= 0.0)
        assert np.all(np.abs(wc[:, :, 1]) <= mu * wc[:, :, 0] + 1e-10)
        if steps % 400 == 0:  # re-drop so contacts keep happening
            st = random_drop_state(robot, rng, n_envs)
            st.warm_joint[:] = 0.0
            st.warm_contact[:] = 0.0
    assert checked >= 10_000


def test_resting_penetration_bound(flat_terrain):
    m = single_link_model(mass=3.0, half=0.25, radius=0.06)
    st = SimState.zeros(1, m)
    st.pose[0, 0] = [0.0, 0.3, 0.0]
    sim = Sim(m, 1)
    for _ in range(200):  # drop and settle
        st, _ = sim.step(st, np.zeros((1, 0)), flat_terrain)
    worst = 0.0
    for _ in range(1000):
        st, _ = sim.step(st, np.zeros((1, 0)), flat_terrain)
        worst = max(worst, -endpoint_heights(m, st, flat_terrain).min())
    assert worst <= 0.002


def test_zero_restitution(robot, flat_terrain):
    # after each solve, normal separation velocity at every active contact
    # (measured at the constraint geometry) is >= -1e-6 m/s
    from planarfall.sim import detect_contacts

    rng = np.random.default_rng(9)
    st = random_drop_state(robot, rng, 1)
    sim = Sim(robot, 1)
    for i in range(800):
        pre = st.copy()
        contacts = detect_contacts(robot, pre, flat_terrain)
        st, diag = sim.step(st, np.zeros((1, 6)), flat_terrain)
        for c in contacts:
            r = c.point - pre.pose[0, c.link, :2]
            v = st.vel[0, c.link]
            vn = c.normal @ (v[:2] + np.array([-v[2] * r[1], v[2] * r[0]]))
            assert vn >= -1e-6


def test_step_determinism_bit_identical(robot, flat_terrain):
    rng = np.random.default_rng(17)
    st = random_drop_state(robot, rng, 3)
    tau = rng.uniform(-10, 10, (3, 6))
    s1, s2 = st.copy(), st.copy()
    sim1, sim2 = Sim(robot, 3), Sim(robot, 3)
    for _ in range(50):
        s1, d1 = sim1.step(s1, tau, flat_terrain)
        s2, d2 = sim2.step(s2, tau, flat_terrain)
    assert np.array_equal(s1.pose, s2.pose)
    assert np.array_equal(s1.vel, s2.vel)
    assert np.array_equal(s1.warm_contact, s2.warm_contact)
    assert np.array_equal(d1.contact_impulse, d2.contact_impulse)
    assert np.array_equal(d1.joint_impulse, d2.joint_impulse)


def test_joint_coincidence_under_operation(robot, flat_terrain):
    # PD-driven random-action falls keep anchor error within the 1 mm tolerance
    rng = np.random.default_rng(23)
    n_envs = 16
    st = random_drop_state(robot, rng, n_envs)
    lift = np.maximum(0.0, 0.01 - endpoint_heights(robot, st, flat_terrain).min(axis=1))
    st.pose[:, :, 1] += lift[:, None]
    sim = Sim(robot, n_envs)
    act = robot.actuators
    lo = np.array([j.limit_lo for j in robot.joints])
    hi = np.array([j.limit_hi for j in robot.joints])
    arrays = robot.arrays()
    targets = np.tile(robot.default_q, (n_envs, 1))
    worst = 0.0
    for i in range(1000):
        if i % 2 == 0:
            a = np.clip(rng.normal(0, 1, (n_envs, 6)), -3, 3)
            targets = np.clip(robot.default_q + robot.action_scale * a, lo, hi)
        q = st.joint_angles(arrays)
        qd = st.joint_rates(arrays)
        tau = np.clip(act.kp * (targets - q) - act.kd * qd, -act.torque_limit, act.torque_limit)
        st, _ = sim.step(st, tau, flat_terrain)
        worst = max(worst, anchor_errors(robot, st).max())
    assert worst <= 0.001
