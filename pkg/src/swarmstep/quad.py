"""Batched quadrotor 6-DoF dynamics: rotor model, control allocation, RK4.

All kernels are column-wise over whole batches and allocation-free in steady
state: callers hand in a :class:`QuadWorkspace` of preallocated scratch
columns sized for the batch, and every intermediate lands in those buffers.
There is no cross-agent coupling, so results are independent of any internal
parallelism width.

State columns follow :mod:`swarmstep.state`; the wrench ``(f_c, tau)`` is
held constant over an integration step (zero-order hold).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ValidationError
from .state import AgentBatch

__all__ = [
    "QuadParams",
    "WrenchCmd",
    "MotorThrusts",
    "MixResult",
    "QuadWorkspace",
    "default_quad_params",
    "allocation_matrix",
    "rotor_thrust_torque",
    "mix_to_motors",
    "mix_command",
    "dynamics_deriv",
    "rk4_step",
]


@dataclass(frozen=True)
class QuadParams:
    """Physical constants of one quadrotor type.

    ``k_t``/``k_q`` map squared motor speed (RPM^2) to thrust (N) and torque
    (N*m); ``arm_length``/``arm_angle`` place the rotors in the body XY plane.
    """

    m: float = 1.0
    i_diag: tuple[float, float, float] = (0.01, 0.01, 0.02)
    g: float = 9.81
    k_t: float = 1e-8
    k_q: float = 1e-10
    arm_length: float = 0.2
    arm_angle: float = np.pi / 4
    omega_max: float = 40000.0

    def __post_init__(self) -> None:
        vals = (self.m, *self.i_diag, self.g, self.k_t, self.k_q,
                self.arm_length, self.arm_angle, self.omega_max)
        if not all(v > 0.0 and np.isfinite(v) for v in vals):
            raise ValidationError("all quadrotor parameters must be strictly positive and finite")
        allocation_matrix(self)  # raises if the geometry is degenerate

    @property
    def f_motor_max(self) -> float:
        return self.k_t * self.omega_max**2

    @property
    def hover_thrust(self) -> float:
        return self.m * self.g


def default_quad_params() -> QuadParams:
    """Fixture parameter set for tests and demos (250-size quad, not ground truth)."""
    return QuadParams()


@dataclass(frozen=True)
class WrenchCmd:
    """Collective thrust (N) plus body torque (N*m): [f_c, tau_x, tau_y, tau_z]."""

    f_c: float
    tau: tuple[float, float, float]

    def __post_init__(self):
        if not (np.isfinite(self.f_c) and all(np.isfinite(t) for t in self.tau)):
            raise ValidationError("wrench command must be finite")


@dataclass(frozen=True)
class MotorThrusts:
    """Per-rotor thrusts (N), each within [0, f_motor_max]."""

    f: tuple[float, float, float, float]


@dataclass(frozen=True)
class MixResult:
    """Mixer output: clamped motor thrusts plus the wrench they actually realize."""

    motors: np.ndarray       # (n, 4)
    f_c: np.ndarray          # (n,) realized collective thrust
    tau: np.ndarray          # (n, 3) realized torque
    saturated: np.ndarray    # (n,) bool, any motor clamped


@lru_cache(maxsize=8)
def _alloc_matrices(params: QuadParams) -> tuple[np.ndarray, np.ndarray]:
    ls = params.arm_length * np.sin(params.arm_angle)
    lc = params.arm_length * np.cos(params.arm_angle)
    kr = params.k_q / params.k_t
    g_mat = np.array([
        [1.0, 1.0, 1.0, 1.0],
        [ls, -ls, -ls, ls],
        [-lc, -lc, lc, lc],
        [kr, -kr, kr, -kr],
    ])
    if abs(np.linalg.det(g_mat)) <= 1e-12:
        raise ValidationError("allocation matrix is singular (degenerate arm angle)")
    g_inv = np.linalg.inv(g_mat)
    g_mat.setflags(write=False)
    g_inv.setflags(write=False)
    return g_mat, g_inv


def allocation_matrix(params: QuadParams) -> np.ndarray:
    """4x4 map from per-rotor thrusts to the wrench [f_c, tau_x, tau_y, tau_z]."""
    return _alloc_matrices(params)[0]


def rotor_thrust_torque(omega_rpm, params: QuadParams):
    """Quadratic rotor fit: thrust k_t*O^2 and torque k_q*O^2.

    Speeds outside [0, omega_max] are clamped; the returned flag marks which
    entries saturated.
    """
    omega = np.asarray(omega_rpm, dtype=float)
    saturated = (omega < 0.0) | (omega > params.omega_max)
    clamped = np.clip(omega, 0.0, params.omega_max)
    sq = clamped * clamped
    return params.k_t * sq, params.k_q * sq, saturated


def mix_to_motors(f_c, tau, params: QuadParams, workspace: "QuadWorkspace | None" = None) -> MixResult:
    """Invert the allocation matrix, clamp motors, report the realized wrench.

    Accepts batch arrays ``f_c`` (n,), ``tau`` (n,3).  Clamping to
    [0, f_motor_max] happens per motor; the realized wrench is recomputed as
    ``G @ f_clamped`` so the caller integrates what the rotors can deliver.
    """
    f_c = np.atleast_1d(np.asarray(f_c, dtype=float))
    tau = np.asarray(tau, dtype=float).reshape(f_c.shape[0], 3)
    g_mat, g_inv = _alloc_matrices(params)
    n = f_c.shape[0]
    ws = workspace if workspace is not None and workspace.n >= n else QuadWorkspace(n)
    wrench = ws.wrench4[:n]
    motors = ws.motors[:n]
    realized = ws.realized[:n]
    wrench[:, 0] = f_c
    wrench[:, 1:] = tau
    np.matmul(wrench, g_inv.T, out=motors)
    b4, b4b, sat = ws.sat4[:n], ws.sat4b[:n], ws.sat_row[:n]
    np.less(motors, 0.0, out=b4)
    np.greater(motors, params.f_motor_max, out=b4b)
    np.logical_or(b4, b4b, out=b4)
    np.logical_or.reduce(b4, axis=1, out=sat)
    np.clip(motors, 0.0, params.f_motor_max, out=motors)
    np.matmul(motors, g_mat.T, out=realized)
    return MixResult(motors=motors, f_c=realized[:, 0], tau=realized[:, 1:], saturated=sat)


def mix_command(cmd: WrenchCmd, params: QuadParams) -> tuple[MotorThrusts, WrenchCmd, bool]:
    """Single-command mixer: (clamped motors, realized wrench, saturated)."""
    res = mix_to_motors(np.array([cmd.f_c]), np.array([cmd.tau]), params)
    motors = MotorThrusts(f=tuple(float(v) for v in res.motors[0]))
    realized = WrenchCmd(f_c=float(res.f_c[0]), tau=tuple(float(v) for v in res.tau[0]))
    return motors, realized, bool(res.saturated[0])


class _StateCols:
    __slots__ = ("pos", "vel", "quat", "omega")

    def __init__(self, n: int) -> None:
        self.pos = np.empty((n, 3))
        self.vel = np.empty((n, 3))
        self.quat = np.empty((n, 4))
        self.omega = np.empty((n, 3))


class QuadWorkspace:
    """Preallocated scratch columns for the batched kernels, capacity ``n``."""

    def __init__(self, n: int) -> None:
        self.n = n
        self.k1 = _StateCols(n)
        self.k2 = _StateCols(n)
        self.k3 = _StateCols(n)
        self.k4 = _StateCols(n)
        self.stage = _StateCols(n)
        self.t0 = np.empty(n)
        self.t1 = np.empty(n)
        self.fin3 = np.empty((n, 3), dtype=bool)
        self.fin4 = np.empty((n, 4), dtype=bool)
        self.row_ok = np.empty(n, dtype=bool)
        self.tmp_bool = np.empty(n, dtype=bool)
        self.fault = np.empty(n, dtype=bool)
        self.alive_col = np.empty((n, 1), dtype=bool)
        self.dead_col = np.empty((n, 1), dtype=bool)
        # mixer scratch
        self.wrench4 = np.empty((n, 4))
        self.motors = np.empty((n, 4))
        self.realized = np.empty((n, 4))
        self.sat4 = np.empty((n, 4), dtype=bool)
        self.sat4b = np.empty((n, 4), dtype=bool)
        self.sat_row = np.empty(n, dtype=bool)

    def refresh_alive(self, alive: np.ndarray) -> None:
        n = alive.shape[0]
        np.copyto(self.alive_col[:n, 0], alive)
        np.logical_not(alive, out=self.dead_col[:n, 0])


def _deriv_kernel(pos, vel, quat, omega, f_c, tau, params: QuadParams,
                  out: _StateCols, ws: QuadWorkspace, n: int) -> None:
    """Eqs of motion, column-wise: pdot=v; vdot=R(q)(0,0,f_c)/m - g e_z;
    qdot = q*(0,w)/2; wdot = I^-1 (tau - w x (I w))."""
    t0, t1 = ws.t0[:n], ws.t1[:n]
    qw, qx, qy, qz = quat[:, 0], quat[:, 1], quat[:, 2], quat[:, 3]
    ox, oy, oz = omega[:, 0], omega[:, 1], omega[:, 2]
    ixx, iyy, izz = params.i_diag
    dpos, dvel, dquat, domega = out.pos[:n], out.vel[:n], out.quat[:n], out.omega[:n]

    np.copyto(dpos, vel)

    # vdot: third column of R(q) scaled by f_c/m, gravity on z
    np.multiply(qx, qz, out=t0)
    np.multiply(qw, qy, out=t1)
    np.add(t0, t1, out=t0)
    np.multiply(t0, 2.0, out=t0)
    np.multiply(t0, f_c, out=t0)
    np.divide(t0, params.m, out=dvel[:, 0])

    np.multiply(qy, qz, out=t0)
    np.multiply(qw, qx, out=t1)
    np.subtract(t0, t1, out=t0)
    np.multiply(t0, 2.0, out=t0)
    np.multiply(t0, f_c, out=t0)
    np.divide(t0, params.m, out=dvel[:, 1])

    np.multiply(qx, qx, out=t0)
    np.multiply(qy, qy, out=t1)
    np.add(t0, t1, out=t0)
    np.multiply(t0, -2.0, out=t0)
    np.add(t0, 1.0, out=t0)
    np.multiply(t0, f_c, out=t0)
    np.divide(t0, params.m, out=dvel[:, 2])
    np.subtract(dvel[:, 2], params.g, out=dvel[:, 2])

    # qdot = 0.5 * q o (0, omega)
    np.multiply(qx, ox, out=t0)
    np.multiply(qy, oy, out=t1)
    np.add(t0, t1, out=t0)
    np.multiply(qz, oz, out=t1)
    np.add(t0, t1, out=t0)
    np.multiply(t0, -0.5, out=dquat[:, 0])

    np.multiply(qw, ox, out=t0)
    np.multiply(qy, oz, out=t1)
    np.add(t0, t1, out=t0)
    np.multiply(qz, oy, out=t1)
    np.subtract(t0, t1, out=t0)
    np.multiply(t0, 0.5, out=dquat[:, 1])

    np.multiply(qw, oy, out=t0)
    np.multiply(qz, ox, out=t1)
    np.add(t0, t1, out=t0)
    np.multiply(qx, oz, out=t1)
    np.subtract(t0, t1, out=t0)
    np.multiply(t0, 0.5, out=dquat[:, 2])

    np.multiply(qw, oz, out=t0)
    np.multiply(qx, oy, out=t1)
    np.add(t0, t1, out=t0)
    np.multiply(qy, ox, out=t1)
    np.subtract(t0, t1, out=t0)
    np.multiply(t0, 0.5, out=dquat[:, 3])

    # wdot = I^-1 (tau - w x (I w)) with diagonal inertia
    np.multiply(oz, izz, out=t0)
    np.multiply(oy, t0, out=t0)
    np.multiply(oy, iyy, out=t1)
    np.multiply(oz, t1, out=t1)
    np.subtract(t0, t1, out=t0)
    np.subtract(tau[:, 0], t0, out=t0)
    np.divide(t0, ixx, out=domega[:, 0])

    np.multiply(ox, ixx, out=t0)
    np.multiply(oz, t0, out=t0)
    np.multiply(oz, izz, out=t1)
    np.multiply(ox, t1, out=t1)
    np.subtract(t0, t1, out=t0)
    np.subtract(tau[:, 1], t0, out=t0)
    np.divide(t0, iyy, out=domega[:, 1])

    np.multiply(oy, iyy, out=t0)
    np.multiply(ox, t0, out=t0)
    np.multiply(ox, ixx, out=t1)
    np.multiply(oy, t1, out=t1)
    np.subtract(t0, t1, out=t0)
    np.subtract(tau[:, 2], t0, out=t0)
    np.divide(t0, izz, out=domega[:, 2])


def _zero_dead(out: _StateCols, dead_col: np.ndarray, n: int) -> None:
    np.copyto(out.pos[:n], 0.0, where=dead_col)
    np.copyto(out.vel[:n], 0.0, where=dead_col)
    np.copyto(out.quat[:n], 0.0, where=dead_col)
    np.copyto(out.omega[:n], 0.0, where=dead_col)


def dynamics_deriv(batch: AgentBatch, f_c: np.ndarray, tau: np.ndarray,
                   params: QuadParams, workspace: QuadWorkspace | None = None,
                   out: _StateCols | None = None) -> _StateCols:
    """State derivative for every alive agent; dead rows get exactly zero."""
    n = batch.n
    ws = workspace if workspace is not None and workspace.n >= n else QuadWorkspace(n)
    if out is None:
        out = ws.k1
    ws.refresh_alive(batch.alive)
    with np.errstate(over="ignore", invalid="ignore"):
        _deriv_kernel(batch.pos, batch.vel, batch.quat, batch.omega,
                      np.asarray(f_c, dtype=float), np.asarray(tau, dtype=float),
                      params, out, ws, n)
    if not batch.alive.all():
        _zero_dead(out, ws.dead_col[:n], n)
    return out


def _stage(dst: _StateCols, base_pos, base_vel, base_quat, base_omega,
           k: _StateCols, h: float, n: int) -> None:
    for dcol, bcol, kcol in (
        (dst.pos[:n], base_pos, k.pos[:n]),
        (dst.vel[:n], base_vel, k.vel[:n]),
        (dst.quat[:n], base_quat, k.quat[:n]),
        (dst.omega[:n], base_omega, k.omega[:n]),
    ):
        np.multiply(kcol, h, out=dcol)
        np.add(dcol, bcol, out=dcol)


def rk4_step(batch: AgentBatch, f_c, tau, params: QuadParams, dt: float,
             workspace: QuadWorkspace | None = None) -> np.ndarray:
    """Classical RK4 over the full state with wrench held constant.

    Quaternions are renormalized once after the step.  Rows that turn
    non-finite are reverted to their pre-step values, marked dead, and their
    agent ids returned so the caller can raise a fault event.  Dead rows are
    untouched.
    """
    if not dt > 0.0:
        raise ValidationError(f"dt must be positive, got {dt}")
    n = batch.n
    ws = workspace if workspace is not None and workspace.n >= n else QuadWorkspace(n)
    f_c = np.asarray(f_c, dtype=float)
    tau = np.asarray(tau, dtype=float)
    ws.refresh_alive(batch.alive)

    pos, vel, quat, omega = batch.pos, batch.vel, batch.quat, batch.omega
    st = ws.stage
    half = 0.5 * dt
    with np.errstate(over="ignore", invalid="ignore"):
        _deriv_kernel(pos, vel, quat, omega, f_c, tau, params, ws.k1, ws, n)
        _stage(st, pos, vel, quat, omega, ws.k1, half, n)
        _deriv_kernel(st.pos[:n], st.vel[:n], st.quat[:n], st.omega[:n], f_c, tau, params, ws.k2, ws, n)
        _stage(st, pos, vel, quat, omega, ws.k2, half, n)
        _deriv_kernel(st.pos[:n], st.vel[:n], st.quat[:n], st.omega[:n], f_c, tau, params, ws.k3, ws, n)
        _stage(st, pos, vel, quat, omega, ws.k3, dt, n)
        _deriv_kernel(st.pos[:n], st.vel[:n], st.quat[:n], st.omega[:n], f_c, tau, params, ws.k4, ws, n)

        # y' = y + dt/6 (k1 + 2 k2 + 2 k3 + k4), accumulated in the stage buffers
        h6 = dt / 6.0
        for scol, ycol, k1c, k2c, k3c, k4c in (
            (st.pos[:n], pos, ws.k1.pos[:n], ws.k2.pos[:n], ws.k3.pos[:n], ws.k4.pos[:n]),
            (st.vel[:n], vel, ws.k1.vel[:n], ws.k2.vel[:n], ws.k3.vel[:n], ws.k4.vel[:n]),
            (st.quat[:n], quat, ws.k1.quat[:n], ws.k2.quat[:n], ws.k3.quat[:n], ws.k4.quat[:n]),
            (st.omega[:n], omega, ws.k1.omega[:n], ws.k2.omega[:n], ws.k3.omega[:n], ws.k4.omega[:n]),
        ):
            np.multiply(k2c, 2.0, out=scol)
            np.add(scol, k1c, out=scol)
            np.multiply(k3c, 2.0, out=k2c)
            np.add(scol, k2c, out=scol)
            np.add(scol, k4c, out=scol)
            np.multiply(scol, h6, out=scol)
            np.add(scol, ycol, out=scol)

        # single post-step renormalization; a zero or non-finite norm marks a fault
        sq = st.quat[:n]
        t0, t1 = ws.t0[:n], ws.t1[:n]
        np.multiply(sq[:, 0], sq[:, 0], out=t0)
        np.multiply(sq[:, 1], sq[:, 1], out=t1)
        np.add(t0, t1, out=t0)
        np.multiply(sq[:, 2], sq[:, 2], out=t1)
        np.add(t0, t1, out=t0)
        np.multiply(sq[:, 3], sq[:, 3], out=t1)
        np.add(t0, t1, out=t0)
        np.sqrt(t0, out=t0)
        np.isfinite(t0, out=ws.row_ok[:n])
        np.greater(t0, 0.0, out=ws.tmp_bool[:n])
        np.logical_and(ws.row_ok[:n], ws.tmp_bool[:n], out=ws.row_ok[:n])
        np.divide(sq, t0[:, None], out=sq)

    # fault detection: any non-finite row is frozen pre-step and killed
    np.isfinite(st.pos[:n], out=ws.fin3[:n])
    np.logical_and.reduce(ws.fin3[:n], axis=1, out=ws.tmp_bool[:n])
    np.logical_and(ws.row_ok[:n], ws.tmp_bool[:n], out=ws.row_ok[:n])
    np.isfinite(st.vel[:n], out=ws.fin3[:n])
    np.logical_and.reduce(ws.fin3[:n], axis=1, out=ws.tmp_bool[:n])
    np.logical_and(ws.row_ok[:n], ws.tmp_bool[:n], out=ws.row_ok[:n])
    np.isfinite(st.omega[:n], out=ws.fin3[:n])
    np.logical_and.reduce(ws.fin3[:n], axis=1, out=ws.tmp_bool[:n])
    np.logical_and(ws.row_ok[:n], ws.tmp_bool[:n], out=ws.row_ok[:n])

    np.logical_not(ws.row_ok[:n], out=ws.fault[:n])
    np.logical_and(ws.fault[:n], batch.alive, out=ws.fault[:n])
    fault = ws.fault[:n]
    if fault.any():
        batch.alive[fault] = False
        fault_ids = batch.agent_ids[fault].copy()
        ws.refresh_alive(batch.alive)
    else:
        fault_ids = np.empty(0, dtype=np.uint64)

    alive_col = ws.alive_col[:n]
    np.copyto(batch.pos, st.pos[:n], where=alive_col)
    np.copyto(batch.vel, st.vel[:n], where=alive_col)
    np.copyto(batch.quat, st.quat[:n], where=alive_col)
    np.copyto(batch.omega, st.omega[:n], where=alive_col)
    return fault_ids
