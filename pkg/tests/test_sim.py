import numpy as np
import pytest

from planarfall.robot import Terrain
from planarfall.sim import (
    GRAVITY, SUBSTEP_DT, Sim, SimState, actuate, detect_contacts,
    forward_kinematics, lag_alpha, pd_torque, step, total_momentum,
)

from conftest import chain_model, pendulum_model, single_link_model


# --- forward kinematics -----------------------------------------------------

def test_fk_identity_default_offsets(robot):
    pose = forward_kinematics(robot, np.zeros((1, 3)), np.zeros((1, 6)))
    # all joint angles zero: every link shares the base orientation and sits
    # at anchor_parent - anchor_child relative to its parent
    assert np.allclose(pose[0, :, 2], 0.0)
    for j in robot.joints:
        expected = pose[0, j.parent, :2] + np.array(j.anchor_parent) - np.array(j.anchor_child)
        assert np.allclose(pose[0, j.child, :2], expected)


def test_fk_translation_equivariance(robot):
    q = robot.default_q
    a = forward_kinematics(robot, np.array([[0.0, 0.0, 0.4]]), q[None])
    b = forward_kinematics(robot, np.array([[1.0, 2.0, 0.4]]), q[None])
    assert np.allclose(b[0, :, :2], a[0, :, :2] + np.array([1.0, 2.0]))
    assert np.allclose(b[0, :, 2], a[0, :, 2])


def test_fk_pendulum_closed_form():
    L = 0.6
    m = pendulum_model(length=L)
    for theta in (-1.2, 0.0, 0.7, 2.5):
        # rod angle theta measured from hanging convention: tip at
        # (L sin t, -L cos t) relative to the pivot means rod world angle
        # is t - pi/2 with the rod local x-axis pointing pivot->tip
        pose = forward_kinematics(m, np.zeros((1, 3)), np.array([[theta - np.pi / 2]]))
        tip = pose[0, 1, :2] + L / 2 * np.array([np.cos(pose[0, 1, 2]), np.sin(pose[0, 1, 2])])
        assert np.allclose(tip, [L * np.sin(theta), -L * np.cos(theta)], atol=1e-12)


def test_fk_dimension_mismatch(robot):
    with pytest.raises(ValueError):
        forward_kinematics(robot, np.zeros((1, 3)), np.zeros((1, 4)))


# --- contact detection -------------------------------------------------------

def test_detect_contacts_airborne(flat_terrain):
    m = single_link_model()
    st = SimState.zeros(1, m)
    st.pose[0, 0] = [0.0, 1.0, 0.0]
    assert detect_contacts(m, st, flat_terrain) == []


def test_detect_contacts_endpoint_on_flat_ground(flat_terrain):
    m = single_link_model(half=0.2, radius=0.05)
    st = SimState.zeros(1, m)
    st.pose[0, 0] = [0.0, 0.05, np.pi / 2]  # vertical: lower endpoint sphere touches
    cons = detect_contacts(m, st, flat_terrain)
    assert len(cons) == 1
    assert np.allclose(cons[0].normal, [0.0, 1.0])
    assert cons[0].penetration == pytest.approx(0.2, abs=1e-9)  # endpoint is 0.2 below CoM


def test_detect_contacts_45_degree_slope():
    # independent oracle: penetration of a sphere against the plane through
    # slope vertices p0, p1, from an explicit normal construction
    slope = Terrain(spacing=1.0, heights=np.array([0.0, 1.0, 2.0]), friction=np.full(3, 0.5), x0=0.0)
    m = single_link_model(half=0.2, radius=0.04)
    p0, p1 = np.array([0.0, 0.0]), np.array([1.0, 1.0])
    d = (p1 - p0) / np.linalg.norm(p1 - p0)
    n_oracle = np.array([-d[1], d[0]])

    st = SimState.zeros(1, m)
    depth = 0.01  # the endpoint itself sits 0.01 below the slope plane
    endpoint = np.array([0.5, 0.5]) - depth * n_oracle
    # capsule aligned with the surface normal so only endpoint b contacts
    com = endpoint + 0.2 * n_oracle
    st.pose[0, 0] = [com[0], com[1], -np.pi / 4]
    cons = detect_contacts(m, st, slope)
    target = [c for c in cons if np.allclose(c.normal, n_oracle, atol=1e-9)]
    assert len(target) == 1, "expected exactly one contact on the 45 degree segment"
    pen_oracle = m.links[0].radius - n_oracle @ (endpoint - p0)
    assert pen_oracle == pytest.approx(depth + m.links[0].radius)
    assert target[0].penetration == pytest.approx(pen_oracle, abs=1e-9)
    assert target[0].friction == 0.5


def test_detect_contacts_rejects_nonfinite(flat_terrain):
    m = single_link_model()
    st = SimState.zeros(1, m)
    st.pose[0, 0, 1] = np.nan
    with pytest.raises(ValueError):
        detect_contacts(m, st, flat_terrain)


# --- pd torque / actuation ---------------------------------------------------

def test_pd_torque_zero_at_target():
    assert pd_torque(np.array([1.0]), np.array([1.0]), np.array([0.0]), 10, 2, 50) == 0


def test_pd_torque_arithmetic():
    out = pd_torque(np.array([0.5]), np.array([0.0]), np.array([0.0]), 10, 0, 100)
    assert out[0] == pytest.approx(5.0)


def test_pd_torque_saturates():
    out = pd_torque(np.array([100.0]), np.array([0.0]), np.array([0.0]), 10, 0, 40)
    assert out[0] == pytest.approx(40.0)


def test_pd_torque_rejects_negative_gains():
    with pytest.raises(ValueError):
        pd_torque(np.zeros(1), np.zeros(1), np.zeros(1), -1, 0, 10)


def test_actuate_zero_lag_limit():
    m = single_link_model()
    st = SimState.zeros(1, m)
    st.lag_torque = np.zeros((1, 1))
    alpha = lag_alpha(np.array([[1e-9]]))  # T -> 0 clamps alpha at 1
    out = actuate(st, np.array([[7.0]]), alpha, tau_max=30.0)
    assert out[0, 0] == pytest.approx(7.0)


def test_actuate_exponential_approach():
    # independent oracle: after n steps from zero state with constant input,
    # tau_n = tau_raw (1 - (1 - alpha)^n) by summing the recurrence directly
    k, n, raw = 4, 9, 5.0
    alpha = SUBSTEP_DT / (k * SUBSTEP_DT)
    expected = 0.0
    for _ in range(n):
        expected = expected + alpha * (raw - expected)
    closed = raw * (1.0 - (1.0 - alpha) ** n)
    assert expected == pytest.approx(closed, rel=1e-12)

    m = single_link_model()
    st = SimState.zeros(1, m)
    st.lag_torque = np.zeros((1, 1))
    a = lag_alpha(np.array([[k * SUBSTEP_DT]]))
    for _ in range(n):
        out = actuate(st, np.array([[raw]]), a, tau_max=30.0)
    assert out[0, 0] == pytest.approx(closed, rel=1e-12)


def test_actuate_disabled_outputs_zero():
    m = single_link_model()
    st = SimState.zeros(1, m)
    st.lag_torque = np.zeros((1, 1))
    a = lag_alpha(np.array([[SUBSTEP_DT]]))
    out = actuate(st, np.array([[9.0]]), a, tau_max=30.0, active=np.zeros(1))
    assert out[0, 0] == 0.0


def test_actuate_clamps_to_torque_limit():
    m = single_link_model()
    st = SimState.zeros(1, m)
    st.lag_torque = np.zeros((1, 1))
    a = lag_alpha(np.array([[1e-9]]))
    out = actuate(st, np.array([[99.0]]), a, tau_max=30.0)
    assert out[0, 0] == pytest.approx(30.0)


# --- stepping ------------------------------------------------------------------

def test_step_semi_implicit_euler_free_link(flat_terrain):
    m = single_link_model()
    st = SimState.zeros(1, m)
    st.pose[0, 0] = [0.0, 5.0, 0.3]
    st.vel[0, 0] = [1.0, 2.0, 0.5]
    st, _ = step(m, st, np.zeros((1, 0)), flat_terrain)
    vz = 2.0 - GRAVITY * SUBSTEP_DT
    assert st.vel[0, 0, 1] == pytest.approx(vz, abs=1e-12)
    assert st.pose[0, 0, 1] == pytest.approx(5.0 + vz * SUBSTEP_DT, abs=1e-12)
    assert st.pose[0, 0, 0] == pytest.approx(1.0 * SUBSTEP_DT, abs=1e-12)


def test_step_resting_normal_impulse_matches_weight(flat_terrain):
    # statics oracle: equilibrium normal impulse = m g dt per step, 1%
    m = single_link_model(mass=2.0, half=0.2, radius=0.05)
    st = SimState.zeros(1, m)
    st.pose[0, 0] = [0.0, 0.05, 0.0]
    sim = Sim(m, 1)
    for _ in range(200):
        st, diag = sim.step(st, np.zeros((1, 0)), flat_terrain)
    total = diag.contact_impulse[0, 0, 1]
    assert total == pytest.approx(2.0 * GRAVITY * SUBSTEP_DT, rel=0.01)
    assert abs(diag.contact_impulse[0, 0, 0]) < 1e-6


def test_step_hanging_chain_internal_forces(flat_terrain):
    # statics oracle: distal joint carries m2 g, proximal carries (m1+m2) g
    m1, m2 = 1.5, 0.9
    m = chain_model(m1=m1, m2=m2)
    st = SimState.zeros(1, m)
    st.pose[0, 0] = [0.0, 1.0, 0.0]
    st.pose[0, 1] = [1.2, 0.8, -np.pi / 2]
    st.pose[0, 2] = [1.2, 0.4, -np.pi / 2]
    sim = Sim(m, 1)
    for _ in range(600):
        st, diag = sim.step(st, np.zeros((1, 2)), flat_terrain)
    forces = diag.joint_internal_force()
    assert forces[0, 1] == pytest.approx(m2 * GRAVITY, rel=0.02)
    assert forces[0, 0] == pytest.approx((m1 + m2) * GRAVITY, rel=0.02)


def test_step_fault_flag_on_nonfinite(flat_terrain):
    m = single_link_model()
    st = SimState.zeros(1, m)
    st.pose[0, 0] = [0.0, 1.0, 0.0]
    st.vel[0, 0, 0] = np.inf
    st, diag = step(m, st, np.zeros((1, 0)), flat_terrain)
    assert diag.fault[0] == 1
    # state restored to the pre-step value rather than NaN-poisoned
    assert st.pose[0, 0, 1] == pytest.approx(1.0)


# --- momentum -------------------------------------------------------------------

def test_total_momentum_zero_at_rest(robot):
    st = SimState.zeros(2, robot)
    st.pose[:] = forward_kinematics(robot, np.tile([0, 1.0, 0], (2, 1)), np.tile(robot.default_q, (2, 1)))
    lin, ang = total_momentum(robot, st)
    assert np.allclose(lin, 0) and np.allclose(ang, 0)


def test_total_momentum_single_link():
    m = single_link_model(mass=2.0)
    st = SimState.zeros(1, m)
    st.vel[0, 0] = [1.0, 0.0, 0.0]
    lin, ang = total_momentum(m, st)
    assert np.allclose(lin[0], [2.0, 0.0])
    assert ang[0] == 0.0


def test_flight_momentum_conserved(robot, flat_terrain):
    from planarfall.sim import link_velocities

    rng = np.random.default_rng(5)
    st = SimState.zeros(1, robot)
    st.pose[:] = forward_kinematics(robot, np.array([[0.0, 50.0, 0.4]]), robot.default_q[None])
    st.vel[:] = link_velocities(robot, st.pose, rng.uniform(-1, 1, (1, 3)), rng.uniform(-2, 2, (1, 6)))
    sim = Sim(robot, 1, gravity=0.0)
    sim.settings.joint_damping = 0.0
    lin0, ang0 = total_momentum(robot, st)
    prev_l, prev_a = lin0, ang0
    for _ in range(400):
        st, _ = sim.step(st, np.zeros((1, 6)), flat_terrain)
        lin, ang = total_momentum(robot, st)
        assert np.abs(lin - prev_l).max() < 1e-8
        assert np.abs(ang - prev_a).max() < 1e-8
        prev_l, prev_a = lin, ang
