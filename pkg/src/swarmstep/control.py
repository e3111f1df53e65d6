"""Per-batch control stack: PID body-rate inner loop plus a cascaded
position -> attitude -> body-rate outer loop, and reference trajectories.

The inner loop is the per-tick hot path and follows the same preallocated
column discipline as the dynamics kernels.  Gains defaults are a tuned
fixture for the test scenarios, nothing more.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .quat import quat_conj, quat_mul
from .quad import QuadParams

__all__ = [
    "PidGains",
    "OuterGains",
    "PosSetpoint",
    "RateSetpoint",
    "RatePidState",
    "PidWorkspace",
    "default_rate_gains",
    "default_outer_gains",
    "rate_pid_step",
    "position_outer_loop",
    "circle_reference",
]


def _vec3(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float) * np.ones(3)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PidGains:
    """Per-axis body-rate PID gains with an integral-state clamp."""

    kp: np.ndarray
    ki: np.ndarray
    kd: np.ndarray
    i_limit: np.ndarray

    def __post_init__(self):
        for name in ("kp", "ki", "kd", "i_limit"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))
            if np.any(getattr(self, name) < 0.0):
                raise ValidationError(f"PID gain {name} must be non-negative")


@dataclass(frozen=True)
class OuterGains:
    """Cascaded position/attitude loop gains and output limits."""

    kp_pos: np.ndarray
    kv: np.ndarray
    k_att: np.ndarray
    omega_sp_max: float = 20.0
    a_cmd_min: float = 0.5  # m/s^2 floor guarding the free-fall singularity

    def __post_init__(self):
        for name in ("kp_pos", "kv", "k_att"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))


def default_rate_gains() -> PidGains:
    # yaw axis is deliberately softer: its torque authority (k_q/k_t) is a
    # small fraction of roll/pitch, and symmetric gains drive the mixer into
    # saturation that corrupts the realized wrench
    return PidGains(kp=(0.25, 0.25, 0.1), ki=(0.05, 0.05, 0.02),
                    kd=(0.002, 0.002, 0.001), i_limit=0.2)


def default_outer_gains() -> OuterGains:
    return OuterGains(kp_pos=16.0, kv=8.0, k_att=(12.0, 12.0, 3.0))


@dataclass(frozen=True)
class PosSetpoint:
    """Position-level reference: position, velocity feedforward, heading."""

    p_sp: np.ndarray
    v_sp: np.ndarray
    yaw_sp: np.ndarray


@dataclass(frozen=True)
class RateSetpoint:
    """Inner-loop reference: body rates (n,3) plus collective thrust (n,)."""

    omega_sp: np.ndarray
    f_c_sp: np.ndarray


class RatePidState:
    """Integral and previous-measurement columns for one agent batch."""

    def __init__(self, n: int) -> None:
        self.integral = np.zeros((n, 3))
        self.prev_omega = np.zeros((n, 3))
        self.has_prev = np.zeros(n, dtype=bool)

    def reset(self, rows: np.ndarray | None = None) -> None:
        if rows is None:
            self.integral[:] = 0.0
            self.has_prev[:] = False
        else:
            self.integral[rows] = 0.0
            self.has_prev[rows] = False


class PidWorkspace:
    """Preallocated scratch for the inner-loop kernel."""

    def __init__(self, n: int) -> None:
        self.n = n
        self.s3 = np.empty((n, 3))
        self.s4 = np.empty((n, 3))
        self.alive_col = np.empty((n, 1), dtype=bool)
        self.dead_col = np.empty((n, 1), dtype=bool)
        self.dead = np.empty(n, dtype=bool)
        self.prev_col = np.empty((n, 1), dtype=bool)

    def refresh(self, alive: np.ndarray, has_prev: np.ndarray) -> None:
        np.copyto(self.alive_col[:, 0], alive)
        np.logical_not(alive, out=self.dead)
        np.copyto(self.dead_col[:, 0], self.dead)
        np.logical_and(has_prev, alive, out=self.prev_col[:, 0])


def rate_pid_step(
    omega: np.ndarray,
    sp: RateSetpoint,
    gains: PidGains,
    dt: float,
    state: RatePidState,
    alive: np.ndarray,
    workspace: PidWorkspace | None = None,
    tau_out: np.ndarray | None = None,
    f_c_out: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Body-rate PID over a batch: tau = kp e + ki ∫e dt - kd dω/dt.

    The derivative acts on the measurement (no setpoint kick) and is zero on
    an axis's first sample; the integral state is clamped to +-i_limit.
    Dead rows get zero output and their state is frozen.  Returns
    ``(f_c, tau)``; ``f_c`` is the setpoint thrust passed through for alive rows.
    """
    if not dt > 0.0:
        raise ValidationError(f"dt must be positive, got {dt}")
    n = omega.shape[0]
    ws = workspace if workspace is not None and workspace.n >= n else PidWorkspace(n)
    tau = tau_out if tau_out is not None else np.empty((n, 3))
    f_c = f_c_out if f_c_out is not None else np.empty(n)
    s3, s4 = ws.s3[:n], ws.s4[:n]
    ws.refresh(alive, state.has_prev)
    alive_col, dead_col, prev_col = ws.alive_col[:n], ws.dead_col[:n], ws.prev_col[:n]

    # error, then integral state (alive rows only), clamped on the state
    np.subtract(sp.omega_sp, omega, out=tau)
    np.multiply(tau, dt, out=s3)
    np.add(state.integral, s3, out=state.integral, where=alive_col)
    np.clip(state.integral, -gains.i_limit, gains.i_limit, out=state.integral)

    # P and I terms
    np.multiply(tau, gains.kp, out=tau)
    np.multiply(state.integral, gains.ki, out=s4)
    np.add(tau, s4, out=tau)

    # derivative on measurement: -kd * (omega - prev) / dt, first sample zero
    np.subtract(omega, state.prev_omega, out=s3)
    np.divide(s3, dt, out=s3)
    np.multiply(s3, gains.kd, out=s3)
    np.subtract(tau, s3, out=tau, where=prev_col)

    np.copyto(state.prev_omega, omega, where=alive_col)
    np.logical_or(state.has_prev, alive, out=state.has_prev)

    np.copyto(tau, 0.0, where=dead_col)
    np.copyto(f_c, sp.f_c_sp)
    np.copyto(f_c, 0.0, where=ws.dead[:n])
    return f_c, tau


def _rotmats_to_quats(r: np.ndarray) -> np.ndarray:
    """Vectorized rotation-matrix -> quaternion (scalar-first), numerically safe."""
    m00, m01, m02 = r[:, 0, 0], r[:, 0, 1], r[:, 0, 2]
    m10, m11, m12 = r[:, 1, 0], r[:, 1, 1], r[:, 1, 2]
    m20, m21, m22 = r[:, 2, 0], r[:, 2, 1], r[:, 2, 2]
    tr = m00 + m11 + m22

    def safe_sqrt(x):
        return np.sqrt(np.maximum(x, 1e-30))

    s0 = safe_sqrt(tr + 1.0) * 2.0
    q0 = np.stack([0.25 * s0, (m21 - m12) / s0, (m02 - m20) / s0, (m10 - m01) / s0], axis=1)
    s1 = safe_sqrt(1.0 + m00 - m11 - m22) * 2.0
    q1 = np.stack([(m21 - m12) / s1, 0.25 * s1, (m01 + m10) / s1, (m02 + m20) / s1], axis=1)
    s2 = safe_sqrt(1.0 + m11 - m00 - m22) * 2.0
    q2 = np.stack([(m02 - m20) / s2, (m01 + m10) / s2, 0.25 * s2, (m12 + m21) / s2], axis=1)
    s3 = safe_sqrt(1.0 + m22 - m00 - m11) * 2.0
    q3 = np.stack([(m10 - m01) / s3, (m02 + m20) / s3, (m12 + m21) / s3, 0.25 * s3], axis=1)

    cond0 = (tr > 0.0)[:, None]
    cond1 = ((m00 >= m11) & (m00 >= m22))[:, None]
    cond2 = (m11 >= m22)[:, None]
    q = np.where(cond0, q0, np.where(cond1, q1, np.where(cond2, q2, q3)))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


@dataclass(frozen=True)
class OuterResult:
    setpoint: RateSetpoint   # inner-loop reference produced by the cascade
    low_thrust: np.ndarray   # (n,) bool, free-fall floor engaged


def position_outer_loop(
    pos: np.ndarray,
    vel: np.ndarray,
    quat: np.ndarray,
    alive: np.ndarray,
    sp: PosSetpoint,
    params: QuadParams,
    gains: OuterGains,
) -> OuterResult:
    """PD position loop -> desired attitude -> body-rate setpoints.

    a_cmd = Kp (p_sp - p) + Kv (v_sp - v) + g e_z; the commanded thrust is
    the projection of m*a_cmd onto the current body z axis, and the rate
    setpoint is K_att times the axis-angle attitude error toward the
    (z_des, yaw_sp) frame.  Near-zero a_cmd (free-fall command) engages a
    thrust floor and raises a flag.
    """
    n = pos.shape[0]
    a_cmd = gains.kp_pos * (sp.p_sp - pos) + gains.kv * (sp.v_sp - vel)
    a_cmd = a_cmd.reshape(n, 3)
    a_cmd[:, 2] += params.g

    a_norm = np.linalg.norm(a_cmd, axis=1)
    low = a_norm < gains.a_cmd_min
    eff = np.maximum(a_norm, gains.a_cmd_min)
    z_des = a_cmd / eff[:, None]
    if low.any():
        z_des[low] = (0.0, 0.0, 1.0)

    qw, qx, qy, qz = quat[:, 0], quat[:, 1], quat[:, 2], quat[:, 3]
    z_body = np.stack([
        2.0 * (qx * qz + qw * qy),
        2.0 * (qy * qz - qw * qx),
        1.0 - 2.0 * (qx * qx + qy * qy),
    ], axis=1)
    f_c = params.m * eff * np.sum(z_body * z_des, axis=1)
    np.clip(f_c, 0.0, 4.0 * params.f_motor_max, out=f_c)

    yaw = np.asarray(sp.yaw_sp, dtype=float) * np.ones(n)
    x_c = np.stack([np.cos(yaw), np.sin(yaw), np.zeros(n)], axis=1)
    y_raw = np.cross(z_des, x_c)
    ny = np.linalg.norm(y_raw, axis=1)
    degenerate = ny < 1e-6
    ny_safe = np.where(degenerate, 1.0, ny)
    y_des = y_raw / ny_safe[:, None]
    if degenerate.any():
        # z_des nearly parallel to the heading vector: build from y_c instead
        y_c = np.stack([-np.sin(yaw), np.cos(yaw), np.zeros(n)], axis=1)
        x_alt = np.cross(y_c, z_des)
        x_alt /= np.linalg.norm(x_alt, axis=1, keepdims=True)
        y_des[degenerate] = np.cross(z_des, x_alt)[degenerate]
    x_des = np.cross(y_des, z_des)

    r_des = np.stack([x_des, y_des, z_des], axis=2)  # columns are the desired axes
    q_des = _rotmats_to_quats(r_des)

    q_err = quat_mul(quat_conj(quat), q_des)
    flip = q_err[:, 0] < 0.0
    q_err[flip] *= -1.0
    s = np.linalg.norm(q_err[:, 1:], axis=1)
    angle = 2.0 * np.arctan2(s, q_err[:, 0])
    factor = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 2.0)
    e_att = q_err[:, 1:] * factor[:, None]

    omega_sp = gains.k_att * e_att
    np.clip(omega_sp, -gains.omega_sp_max, gains.omega_sp_max, out=omega_sp)

    dead = ~alive
    if dead.any():
        f_c[dead] = 0.0
        omega_sp[dead] = 0.0
        low[dead] = False
    return OuterResult(setpoint=RateSetpoint(omega_sp=omega_sp, f_c_sp=f_c), low_thrust=low)


def circle_reference(t, radius, omega, z, phase=0.0) -> PosSetpoint:
    """Circle trajectory reference in the XY plane at altitude ``z``.

    ``p = (R cos(wt+phi), R sin(wt+phi), z)``, velocity is the tangent, and
    the heading setpoint points along the direction of travel.  Any of the
    parameters may be arrays to evaluate a whole batch at once.
    """
    radius = np.asarray(radius, dtype=float)
    if np.any(radius <= 0.0):
        raise ValidationError("circle radius must be positive")
    omega = np.asarray(omega, dtype=float)
    theta = omega * t + phase
    p_sp = np.stack(np.broadcast_arrays(radius * np.cos(theta), radius * np.sin(theta),
                                        np.asarray(z, dtype=float)), axis=-1)
    v_sp = np.stack(np.broadcast_arrays(-radius * omega * np.sin(theta),
                                        radius * omega * np.cos(theta),
                                        np.zeros_like(theta)), axis=-1)
    yaw_sp = theta + np.copysign(np.pi / 2, omega)
    return PosSetpoint(p_sp=p_sp, v_sp=v_sp, yaw_sp=np.asarray(yaw_sp, dtype=float))
