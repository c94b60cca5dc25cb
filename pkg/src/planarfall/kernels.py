"""Numba kernels for the batched planar rigid-body substep.

Layout conventions:
  pose, vel        (N, L, 3)  [x, z, theta] / [vx, vz, omega] per link
  torque           (N, J)     applied joint torques
  heights, mu      (N, S)     per-env heightfield samples / per-segment friction

One env is fully independent of every other env, so the batch loop can run
under prange without affecting per-env results. All loops are fixed-order
and fastmath stays off: results are bit-deterministic for fixed inputs.

Solver: warm-started sequential impulses (Gauss-Seidel) on joint anchor,
joint limit and contact constraints at the velocity level with zero
restitution. Joint anchor drift is stabilized with a Baumgarte bias
velocity; penetration and limit overshoot are removed by a position
projection pass after integration. Joint impulses (bias included) are
applied at the midpoint of the two anchor estimates, so internal impulses
conserve linear and angular momentum exactly; position projection is used
only against the ground, never between links.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

# contact slot k maps to link k // 2, endpoint k % 2
_CONTACT_COLS = 12  # nx, nz, rx, rz, pen, mu, kn, kt, acc_n, acc_t, active, bias


@njit(cache=True, inline="always")
def _rot_x(c, s, x, z):
    return c * x - s * z


@njit(cache=True, inline="always")
def _rot_z(c, s, x, z):
    return s * x + c * z


@njit(cache=True, inline="always")
def _surface(heights, spacing, x0, x):
    """Segment index, surface point and unit normal of the segment under x."""
    S = heights.shape[0]
    k = int(np.floor((x - x0) / spacing))
    if k < 0:
        k = 0
    elif k > S - 2:
        k = S - 2
    hx = x0 + k * spacing
    h0 = heights[k]
    slope = (heights[k + 1] - h0) / spacing
    inv_len = 1.0 / np.sqrt(1.0 + slope * slope)
    nx = -slope * inv_len
    nz = inv_len
    return k, hx, h0, nx, nz


@njit(cache=True)
def _detect_env(pose, cap_a, cap_b, radius, heights, mu_seg, spacing, x0, margin, con):
    """Fill the contact slot table `con` (K, _CONTACT_COLS) for one env.

    Slot 2l+e holds the contact of endpoint e of link l; `active` column is
    1.0 when the endpoint sphere is within `margin` of the surface. The
    stored r vector points from the link CoM to the contact point.
    """
    L = pose.shape[0]
    for l in range(L):
        c = np.cos(pose[l, 2])
        s = np.sin(pose[l, 2])
        for e in range(2):
            ax = cap_a[l, 0] if e == 0 else cap_b[l, 0]
            az = cap_a[l, 1] if e == 0 else cap_b[l, 1]
            ex = pose[l, 0] + _rot_x(c, s, ax, az)
            ez = pose[l, 1] + _rot_z(c, s, ax, az)
            k, hx, h0, nx, nz = _surface(heights, spacing, x0, ex)
            d = nx * (ex - hx) + nz * (ez - h0)
            sep = d - radius[l]
            slot = 2 * l + e
            con[slot, 10] = 1.0 if sep <= margin else 0.0
            con[slot, 0] = nx
            con[slot, 1] = nz
            con[slot, 2] = ex - radius[l] * nx - pose[l, 0]
            con[slot, 3] = ez - radius[l] * nz - pose[l, 1]
            con[slot, 4] = -sep
            con[slot, 5] = mu_seg[k]
            con[slot, 6] = 0.0
            con[slot, 7] = 0.0
            con[slot, 8] = 0.0
            con[slot, 9] = 0.0
            con[slot, 11] = 0.0


@njit(cache=True)
def _substep_env(pose, vel, inv_m, inv_i, torque,
                 heights, mu_seg, spacing, x0,
                 cap_a, cap_b, radius,
                 jp, jc, ap, ac, lim_lo, lim_hi,
                 dt, gravity, joint_damping, n_iter, n_pos_iter, n_rest_iter, baumgarte, joint_beta,
                 slop, margin, max_corr, deep_slop, max_bias,
                 warm_joint, warm_contact,
                 imp_contact, imp_joint, contact_flag):
    L = pose.shape[0]
    J = jp.shape[0]
    K = 2 * L

    pose0 = pose.copy()
    vel0 = vel.copy()

    # external forces: gravity, equal/opposite joint torques, passive drive friction
    for l in range(L):
        vel[l, 1] -= gravity * dt
    for j in range(J):
        p, ch = jp[j], jc[j]
        tau = torque[j] - joint_damping * (vel[ch, 2] - vel[p, 2])
        vel[ch, 2] += tau * dt * inv_i[ch]
        vel[p, 2] -= tau * dt * inv_i[p]

    # contact setup at pre-step positions, warm-started by endpoint slot;
    # deep penetration gets a capped recovery bias velocity
    con = np.empty((K, _CONTACT_COLS))
    _detect_env(pose, cap_a, cap_b, radius, heights, mu_seg, spacing, x0, margin, con)
    for k in range(K):
        if con[k, 10] == 0.0:
            warm_contact[k, 0] = 0.0
            warm_contact[k, 1] = 0.0
            continue
        l = k // 2
        nx, nz, rx, rz = con[k, 0], con[k, 1], con[k, 2], con[k, 3]
        rxn = rx * nz - rz * nx
        con[k, 6] = 1.0 / (inv_m[l] + inv_i[l] * rxn * rxn)
        tx, tz = -nz, nx
        rxt = rx * tz - rz * tx
        con[k, 7] = 1.0 / (inv_m[l] + inv_i[l] * rxt * rxt)
        if con[k, 4] > deep_slop:
            b = (baumgarte / dt) * (con[k, 4] - deep_slop)
            con[k, 11] = b if b < max_bias else max_bias
        ln = warm_contact[k, 0]
        lt = warm_contact[k, 1]
        con[k, 8] = ln
        con[k, 9] = lt
        px = ln * nx + lt * tx
        pz = ln * nz + lt * tz
        vel[l, 0] += px * inv_m[l]
        vel[l, 1] += pz * inv_m[l]
        vel[l, 2] += inv_i[l] * (rx * pz - rz * px)

    # joint setup: midpoint anchors, 2x2 effective mass, Baumgarte bias
    # velocity toward anchor coincidence, then warm-start application
    jd = np.empty((J, 10))  # rpx rpz rcx rcz k11 k12 k22 det bx bz
    for j in range(J):
        p, ch = jp[j], jc[j]
        cp, sp = np.cos(pose[p, 2]), np.sin(pose[p, 2])
        cc, sc = np.cos(pose[ch, 2]), np.sin(pose[ch, 2])
        pax = pose[p, 0] + _rot_x(cp, sp, ap[j, 0], ap[j, 1])
        paz = pose[p, 1] + _rot_z(cp, sp, ap[j, 0], ap[j, 1])
        cax = pose[ch, 0] + _rot_x(cc, sc, ac[j, 0], ac[j, 1])
        caz = pose[ch, 1] + _rot_z(cc, sc, ac[j, 0], ac[j, 1])
        mx, mz = 0.5 * (pax + cax), 0.5 * (paz + caz)
        rpx, rpz = mx - pose[p, 0], mz - pose[p, 1]
        rcx, rcz = mx - pose[ch, 0], mz - pose[ch, 1]
        k11 = inv_m[p] + inv_m[ch] + inv_i[p] * rpz * rpz + inv_i[ch] * rcz * rcz
        k12 = -inv_i[p] * rpx * rpz - inv_i[ch] * rcx * rcz
        k22 = inv_m[p] + inv_m[ch] + inv_i[p] * rpx * rpx + inv_i[ch] * rcx * rcx
        jd[j, 0], jd[j, 1], jd[j, 2], jd[j, 3] = rpx, rpz, rcx, rcz
        jd[j, 4], jd[j, 5], jd[j, 6] = k11, k12, k22
        jd[j, 7] = k11 * k22 - k12 * k12
        jd[j, 8] = (joint_beta / dt) * (cax - pax)
        jd[j, 9] = (joint_beta / dt) * (caz - paz)
        px = warm_joint[j, 0]
        pz = warm_joint[j, 1]
        imp_joint[j, 0] += px
        imp_joint[j, 1] += pz
        vel[p, 0] -= px * inv_m[p]
        vel[p, 1] -= pz * inv_m[p]
        vel[p, 2] -= inv_i[p] * (rpx * pz - rpz * px)
        vel[ch, 0] += px * inv_m[ch]
        vel[ch, 1] += pz * inv_m[ch]
        vel[ch, 2] += inv_i[ch] * (rcx * pz - rcz * px)

    # joint limit activation (side: -1 low, +1 high, 0 inactive) with a
    # Baumgarte bias rate pushing the overshoot back inside the interval
    lim_side = np.zeros(J, dtype=np.int64)
    lim_acc = np.zeros(J)
    lim_bias = np.zeros(J)
    for j in range(J):
        q = pose[jc[j], 2] - pose[jp[j], 2]
        if q <= lim_lo[j]:
            lim_side[j] = -1
            lim_bias[j] = (baumgarte / dt) * (lim_lo[j] - q)
        elif q >= lim_hi[j]:
            lim_side[j] = 1
            lim_bias[j] = (baumgarte / dt) * (q - lim_hi[j])

    # velocity iterations
    for _ in range(n_iter):
        for j in range(J):
            p, ch = jp[j], jc[j]
            rpx, rpz, rcx, rcz = jd[j, 0], jd[j, 1], jd[j, 2], jd[j, 3]
            ux = (vel[ch, 0] - vel[ch, 2] * rcz) - (vel[p, 0] - vel[p, 2] * rpz) + jd[j, 8]
            uz = (vel[ch, 1] + vel[ch, 2] * rcx) - (vel[p, 1] + vel[p, 2] * rpx) + jd[j, 9]
            det = jd[j, 7]
            px = -(jd[j, 6] * ux - jd[j, 5] * uz) / det
            pz = -(-jd[j, 5] * ux + jd[j, 4] * uz) / det
            vel[p, 0] -= px * inv_m[p]
            vel[p, 1] -= pz * inv_m[p]
            vel[p, 2] -= inv_i[p] * (rpx * pz - rpz * px)
            vel[ch, 0] += px * inv_m[ch]
            vel[ch, 1] += pz * inv_m[ch]
            vel[ch, 2] += inv_i[ch] * (rcx * pz - rcz * px)
            imp_joint[j, 0] += px
            imp_joint[j, 1] += pz

        for j in range(J):
            if lim_side[j] == 0:
                continue
            p, ch = jp[j], jc[j]
            w = vel[ch, 2] - vel[p, 2]
            k = inv_i[p] + inv_i[ch]
            if k <= 0.0:
                continue
            if lim_side[j] == -1:
                lam = -(w - lim_bias[j]) / k
                new_acc = lim_acc[j] + lam
                if new_acc < 0.0:
                    new_acc = 0.0
            else:
                lam = -(w + lim_bias[j]) / k
                new_acc = lim_acc[j] + lam
                if new_acc > 0.0:
                    new_acc = 0.0
            d = new_acc - lim_acc[j]
            lim_acc[j] = new_acc
            vel[ch, 2] += inv_i[ch] * d
            vel[p, 2] -= inv_i[p] * d

        for k in range(K):
            if con[k, 10] == 0.0:
                continue
            l = k // 2
            nx, nz, rx, rz = con[k, 0], con[k, 1], con[k, 2], con[k, 3]
            # normal, then tangent: the final tangent clamp therefore uses
            # the final normal impulse and the friction cone holds exactly
            vx = vel[l, 0] - vel[l, 2] * rz
            vz = vel[l, 1] + vel[l, 2] * rx
            vn = vx * nx + vz * nz
            lam = -(vn - con[k, 11]) * con[k, 6]
            new_acc = con[k, 8] + lam
            if new_acc < 0.0:
                new_acc = 0.0
            d = new_acc - con[k, 8]
            con[k, 8] = new_acc
            vel[l, 0] += d * nx * inv_m[l]
            vel[l, 1] += d * nz * inv_m[l]
            vel[l, 2] += inv_i[l] * (rx * nz - rz * nx) * d

            tx, tz = -nz, nx
            vx = vel[l, 0] - vel[l, 2] * rz
            vz = vel[l, 1] + vel[l, 2] * rx
            vt = vx * tx + vz * tz
            lam = -vt * con[k, 7]
            hi = con[k, 5] * con[k, 8]
            new_acc = con[k, 9] + lam
            if new_acc > hi:
                new_acc = hi
            elif new_acc < -hi:
                new_acc = -hi
            d = new_acc - con[k, 9]
            con[k, 9] = new_acc
            vel[l, 0] += d * tx * inv_m[l]
            vel[l, 1] += d * tz * inv_m[l]
            vel[l, 2] += inv_i[l] * (rx * tz - rz * tx) * d

    # normal-only cleanup sweeps: drive residual approach velocities out
    # without touching tangents; the floor keeps the friction cone exact
    for _ in range(n_rest_iter):
        for k in range(K):
            if con[k, 10] == 0.0:
                continue
            l = k // 2
            nx, nz, rx, rz = con[k, 0], con[k, 1], con[k, 2], con[k, 3]
            vx = vel[l, 0] - vel[l, 2] * rz
            vz = vel[l, 1] + vel[l, 2] * rx
            vn = vx * nx + vz * nz
            lam = -(vn - con[k, 11]) * con[k, 6]
            floor = np.abs(con[k, 9]) / con[k, 5] if con[k, 5] > 0.0 else 0.0
            new_acc = con[k, 8] + lam
            if new_acc < floor:
                new_acc = floor
            d = new_acc - con[k, 8]
            con[k, 8] = new_acc
            vel[l, 0] += d * nx * inv_m[l]
            vel[l, 1] += d * nz * inv_m[l]
            vel[l, 2] += inv_i[l] * (rx * nz - rz * nx) * d

    # integrate positions
    for l in range(L):
        pose[l, 0] += vel[l, 0] * dt
        pose[l, 1] += vel[l, 1] * dt
        pose[l, 2] += vel[l, 2] * dt

    # position projection against the ground: penetration and limit
    # overshoot only (joint anchors are handled by the velocity bias)
    for _ in range(n_pos_iter):
        for l in range(L):
            c = np.cos(pose[l, 2])
            s = np.sin(pose[l, 2])
            for e in range(2):
                ax = cap_a[l, 0] if e == 0 else cap_b[l, 0]
                az = cap_a[l, 1] if e == 0 else cap_b[l, 1]
                ex = pose[l, 0] + _rot_x(c, s, ax, az)
                ez = pose[l, 1] + _rot_z(c, s, ax, az)
                _, hx, h0, nx, nz = _surface(heights, spacing, x0, ex)
                pen = radius[l] - (nx * (ex - hx) + nz * (ez - h0))
                if pen <= slop:
                    continue
                corr = baumgarte * (pen - slop)
                if corr > max_corr:
                    corr = max_corr
                rx = ex - radius[l] * nx - pose[l, 0]
                rz = ez - radius[l] * nz - pose[l, 1]
                rxn = rx * nz - rz * nx
                kn = inv_m[l] + inv_i[l] * rxn * rxn
                lam = corr / kn
                pose[l, 0] += lam * nx * inv_m[l]
                pose[l, 1] += lam * nz * inv_m[l]
                pose[l, 2] += inv_i[l] * rxn * lam

    # coordinate projection: when the Gauss-Seidel loop residual has let an
    # anchor drift past half the position tolerance, rebuild child positions
    # along the tree with the current orientations (joint angles preserved).
    # Free flight never trips the threshold, so conservation stays exact.
    worst_gap = 0.0
    for j in range(J):
        p, ch = jp[j], jc[j]
        cp, sp = np.cos(pose[p, 2]), np.sin(pose[p, 2])
        cc, sc = np.cos(pose[ch, 2]), np.sin(pose[ch, 2])
        gx = (pose[ch, 0] + _rot_x(cc, sc, ac[j, 0], ac[j, 1])) - (pose[p, 0] + _rot_x(cp, sp, ap[j, 0], ap[j, 1]))
        gz = (pose[ch, 1] + _rot_z(cc, sc, ac[j, 0], ac[j, 1])) - (pose[p, 1] + _rot_z(cp, sp, ap[j, 0], ap[j, 1]))
        gap = np.sqrt(gx * gx + gz * gz)
        if gap > worst_gap:
            worst_gap = gap
    if worst_gap > 5e-4:
        for j in range(J):
            p, ch = jp[j], jc[j]
            cp, sp = np.cos(pose[p, 2]), np.sin(pose[p, 2])
            cc, sc = np.cos(pose[ch, 2]), np.sin(pose[ch, 2])
            pose[ch, 0] = pose[p, 0] + _rot_x(cp, sp, ap[j, 0], ap[j, 1]) - _rot_x(cc, sc, ac[j, 0], ac[j, 1])
            pose[ch, 1] = pose[p, 1] + _rot_z(cp, sp, ap[j, 0], ap[j, 1]) - _rot_z(cc, sc, ac[j, 0], ac[j, 1])

    # diagnostics and fault scan
    ok = True
    for l in range(L):
        for d in range(3):
            if not (np.isfinite(pose[l, d]) and np.isfinite(vel[l, d])):
                ok = False
    if not ok:
        for l in range(L):
            for d in range(3):
                pose[l, d] = pose0[l, d]
                vel[l, d] = vel0[l, d]
        for j in range(J):
            warm_joint[j, 0] = 0.0
            warm_joint[j, 1] = 0.0
        for k in range(K):
            warm_contact[k, 0] = 0.0
            warm_contact[k, 1] = 0.0
        return 1

    for j in range(J):
        warm_joint[j, 0] = imp_joint[j, 0]
        warm_joint[j, 1] = imp_joint[j, 1]
    for k in range(K):
        if con[k, 10] != 0.0:
            l = k // 2
            contact_flag[l] = 1
            warm_contact[k, 0] = con[k, 8]
            warm_contact[k, 1] = con[k, 9]
            imp_contact[l, 0] += con[k, 8] * con[k, 0] - con[k, 9] * con[k, 1]
            imp_contact[l, 1] += con[k, 8] * con[k, 1] + con[k, 9] * con[k, 0]
    return 0


@njit(cache=True, parallel=True)
def substep_batch(pose, vel, inv_m, inv_i, torque,
                  heights, mu, spacing, x0,
                  cap_a, cap_b, radius,
                  jp, jc, ap, ac, lim_lo, lim_hi,
                  dt, gravity, joint_damping, n_iter, n_pos_iter, n_rest_iter, baumgarte, joint_beta,
                  slop, margin, max_corr, deep_slop, max_bias,
                  warm_joint, warm_contact,
                  imp_contact, imp_joint, contact_flag, fault):
    N = pose.shape[0]
    for n in prange(N):
        for l in range(pose.shape[1]):
            contact_flag[n, l] = 0
            imp_contact[n, l, 0] = 0.0
            imp_contact[n, l, 1] = 0.0
        for j in range(jp.shape[0]):
            imp_joint[n, j, 0] = 0.0
            imp_joint[n, j, 1] = 0.0
        fault[n] = _substep_env(
            pose[n], vel[n], inv_m[n], inv_i[n], torque[n],
            heights[n], mu[n], spacing, x0,
            cap_a, cap_b, radius,
            jp, jc, ap, ac, lim_lo, lim_hi,
            dt, gravity, joint_damping, n_iter, n_pos_iter, n_rest_iter, baumgarte, joint_beta,
            slop, margin, max_corr, deep_slop, max_bias,
            warm_joint[n], warm_contact[n],
            imp_contact[n], imp_joint[n], contact_flag[n])


@njit(cache=True)
def fk_env(base_pose, q, jp, jc, ap, ac, out_pose):
    out_pose[0, 0] = base_pose[0]
    out_pose[0, 1] = base_pose[1]
    out_pose[0, 2] = base_pose[2]
    for j in range(jp.shape[0]):
        p, ch = jp[j], jc[j]
        thp = out_pose[p, 2]
        thc = thp + q[j]
        cp, sp = np.cos(thp), np.sin(thp)
        cc, sc = np.cos(thc), np.sin(thc)
        out_pose[ch, 0] = out_pose[p, 0] + _rot_x(cp, sp, ap[j, 0], ap[j, 1]) - _rot_x(cc, sc, ac[j, 0], ac[j, 1])
        out_pose[ch, 1] = out_pose[p, 1] + _rot_z(cp, sp, ap[j, 0], ap[j, 1]) - _rot_z(cc, sc, ac[j, 0], ac[j, 1])
        out_pose[ch, 2] = thc


@njit(cache=True)
def fk_vel_env(pose, base_vel, qdot, jp, jc, ap, ac, out_vel):
    """Link velocities consistent with base velocity and joint rates."""
    out_vel[0, 0] = base_vel[0]
    out_vel[0, 1] = base_vel[1]
    out_vel[0, 2] = base_vel[2]
    for j in range(jp.shape[0]):
        p, ch = jp[j], jc[j]
        cp, sp = np.cos(pose[p, 2]), np.sin(pose[p, 2])
        cc, sc = np.cos(pose[ch, 2]), np.sin(pose[ch, 2])
        rpx = _rot_x(cp, sp, ap[j, 0], ap[j, 1])
        rpz = _rot_z(cp, sp, ap[j, 0], ap[j, 1])
        rcx = _rot_x(cc, sc, ac[j, 0], ac[j, 1])
        rcz = _rot_z(cc, sc, ac[j, 0], ac[j, 1])
        wc = out_vel[p, 2] + qdot[j]
        # anchor velocity from the parent side, then back out the child CoM
        avx = out_vel[p, 0] - out_vel[p, 2] * rpz
        avz = out_vel[p, 1] + out_vel[p, 2] * rpx
        out_vel[ch, 0] = avx + wc * rcz
        out_vel[ch, 1] = avz - wc * rcx
        out_vel[ch, 2] = wc


@njit(cache=True)
def fk_batch(base_pose, q, jp, jc, ap, ac, out_pose):
    for n in range(base_pose.shape[0]):
        fk_env(base_pose[n], q[n], jp, jc, ap, ac, out_pose[n])


@njit(cache=True)
def detect_batch(pose, cap_a, cap_b, radius, heights, mu, spacing, x0, margin, con):
    for n in range(pose.shape[0]):
        _detect_env(pose[n], cap_a, cap_b, radius, heights[n], mu[n], spacing, x0, margin, con[n])
