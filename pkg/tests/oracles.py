"""Independent scalar/brute-force reference implementations used as oracles.

Everything here is deliberately written per-agent with plain Python floats
(or tiny O(N^2) loops), separate from the batched kernels under test.
"""

from __future__ import annotations

import math


def quad_deriv_scalar(state, f_c, tau, p):
    """Derivative of one quadrotor state tuple.

    ``state`` is (px,py,pz, vx,vy,vz, qw,qx,qy,qz, ox,oy,oz); returns the
    13-tuple derivative.  Equations: pdot = v; vdot = R(q) (0,0,f_c)/m - g ez;
    qdot = q*(0,w)/2; wdot = I^-1 (tau - w x (I w)).
    """
    (_, _, _, vx, vy, vz, qw, qx, qy, qz, ox, oy, oz) = state
    m, g = p.m, p.g
    ixx, iyy, izz = p.i_diag
    tx, ty, tz = tau

    r02 = 2.0 * (qx * qz + qw * qy)
    r12 = 2.0 * (qy * qz - qw * qx)
    r22 = 1.0 - 2.0 * (qx * qx + qy * qy)
    ax = r02 * f_c / m
    ay = r12 * f_c / m
    az = r22 * f_c / m - g

    dqw = (qx * ox + qy * oy + qz * oz) * -0.5
    dqx = (qw * ox + qy * oz - qz * oy) * 0.5
    dqy = (qw * oy + qz * ox - qx * oz) * 0.5
    dqz = (qw * oz + qx * oy - qy * ox) * 0.5

    cx = oy * (izz * oz) - oz * (iyy * oy)
    cy = oz * (ixx * ox) - ox * (izz * oz)
    cz = ox * (iyy * oy) - oy * (ixx * ox)
    dox = (tx - cx) / ixx
    doy = (ty - cy) / iyy
    doz = (tz - cz) / izz

    return (vx, vy, vz, ax, ay, az, dqw, dqx, dqy, dqz, dox, doy, doz)


def quad_rk4_scalar(state, f_c, tau, p, dt):
    """One classical RK4 step of a single quadrotor, quaternion renormalized once."""
    half = 0.5 * dt
    k1 = quad_deriv_scalar(state, f_c, tau, p)
    y2 = tuple(state[i] + half * k1[i] for i in range(13))
    k2 = quad_deriv_scalar(y2, f_c, tau, p)
    y3 = tuple(state[i] + half * k2[i] for i in range(13))
    k3 = quad_deriv_scalar(y3, f_c, tau, p)
    y4 = tuple(state[i] + dt * k3[i] for i in range(13))
    k4 = quad_deriv_scalar(y4, f_c, tau, p)
    h6 = dt / 6.0
    out = [state[i] + h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(13)]
    qw, qx, qy, qz = out[6], out[7], out[8], out[9]
    norm = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    out[6], out[7], out[8], out[9] = qw / norm, qx / norm, qy / norm, qz / norm
    return tuple(out)


def rate_pid_scalar(omega, omega_sp, integral, prev_omega, has_prev, gains_axis, dt):
    """One axis of the body-rate PID: returns (torque, new_integral).

    ``gains_axis`` is (kp, ki, kd, i_limit).  Derivative acts on the
    measurement; the integral state is clamped to +-i_limit.
    """
    kp, ki, kd, i_limit = gains_axis
    e = omega_sp - omega
    integral = integral + e * dt
    integral = max(-i_limit, min(i_limit, integral))
    d = 0.0 if not has_prev else -(omega - prev_omega) / dt
    tau = kp * e + ki * integral + kd * d
    return tau, integral


def collide_all_pairs(ids, positions, radii, r_sense):
    """O(N^2) collision/neighbor oracle over alive agents.

    ``positions`` is a list of (x, y, z); returns (set of (id_a, id_b) with
    id_a < id_b and strict overlap, dict id -> set of neighbor ids within
    strict r_sense).
    """
    n = len(ids)
    collisions = set()
    neighbors = {i: set() for i in ids}
    for a in range(n):
        xa, ya, za = positions[a]
        for b in range(a + 1, n):
            dx = xa - positions[b][0]
            dy = ya - positions[b][1]
            dz = za - positions[b][2]
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if d < radii[a] + radii[b]:
                pair = (min(ids[a], ids[b]), max(ids[a], ids[b]))
                collisions.add(pair)
            if d < r_sense:
                neighbors[ids[a]].add(ids[b])
                neighbors[ids[b]].add(ids[a])
    return collisions, neighbors
