"""Central side: agent-type groups, the fixed-step main loop, and run().

Each agent type is one independently stepped group (quadrotor or unicycle).
The loop order per tick is: apply queued events (deaths), apply latest
commands, step every group (controller + integrator), then publish one
coherent snapshot to the collision detector, the algorithm channel and the
viewer channel.  Only this loop mutates agent state; everything else
communicates through queues and immutable snapshots.
"""

from __future__ import annotations

import logging
import os
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

import numpy as np

log = logging.getLogger("swarmstep.core")

from .collision import CollisionConfig, CollisionReport, detect, run_detector
from .config import SimConfig, layout_poses
from .control import (OuterGains, PidGains, PidWorkspace, PosSetpoint, RateSetpoint,
                      RatePidState, default_outer_gains, default_rate_gains,
                      position_outer_loop, rate_pid_step)
from .errors import ConfigError, ValidationError
from .quad import QuadParams, QuadWorkspace, allocation_matrix, mix_to_motors, rk4_step, rotor_thrust_torque
from .quat import quat_yaw, yaw_quat
from .state import AgentBatch, BatchSnapshot, SimClock, WorldSnapshot, batch_create, batch_snapshot
from .wire import AgentCommand, CommandLevel, InfluenceMode, ViewerInputMsg, viewer_velocity_offsets

__all__ = ["SimEventKind", "SimEvent", "UnicycleParams", "QuadGroup", "UnicycleGroup",
           "World", "ExitReport", "build_world", "run", "unicycle_step", "worker_threads"]


class SimEventKind(str, Enum):
    COLLISION_DEATH = "collision_death"
    FAULT_DEATH = "fault_death"
    COMMAND_REJECTED = "agent_command_rejected"


@dataclass(frozen=True)
class SimEvent:
    tick: int
    kind: SimEventKind
    agent_ids: tuple[int, ...]


@dataclass(frozen=True)
class UnicycleParams:
    v_max: float = 5.0
    omega_max: float = 3.0

    def __post_init__(self):
        if not (self.v_max > 0.0 and self.omega_max > 0.0):
            raise ValidationError("unicycle limits must be positive")


def worker_threads() -> int:
    """Worker cap from SWARMSTEP_THREADS (default: serial)."""
    try:
        return max(1, int(os.environ.get("SWARMSTEP_THREADS", "1")))
    except ValueError:
        return 1


_LVL_POS, _LVL_RATE, _LVL_MOTOR = 0, 1, 2


class QuadGroup:
    """One quadrotor type: batch, controller stack, and command store.

    Agents default to position-hold at their initial pose; commands persist
    until superseded (latest-wins, never queued).
    """

    kind = "quadrotor"

    def __init__(self, type_id: int, batch: AgentBatch, params: QuadParams,
                 rate_gains: PidGains | None = None, outer_gains: OuterGains | None = None):
        n = batch.n
        self.type_id = type_id
        self.batch = batch
        self.params = params
        self.rate_gains = rate_gains or default_rate_gains()
        self.outer_gains = outer_gains or default_outer_gains()
        self.pid_state = RatePidState(n)
        self.pid_ws = PidWorkspace(n)
        self.quad_ws = QuadWorkspace(n)
        self._row = {int(a): i for i, a in enumerate(batch.agent_ids)}

        self.cmd_level = np.full(n, _LVL_POS, dtype=np.uint8)
        self.cmd_values = np.zeros((n, 7))
        self.cmd_values[:, :3] = batch.pos
        self.cmd_values[:, 6] = quat_yaw(batch.quat)
        self._level_dirty = True
        self._pos_mask = np.ones(n, dtype=bool)
        self._rate_mask = np.zeros(n, dtype=bool)
        self._motor_mask = np.zeros(n, dtype=bool)

        self.v_overlay = np.zeros((n, 3))
        self._overlay_active = False
        self.omega_sp = np.zeros((n, 3))
        self.f_c_sp = np.zeros(n)
        self.tau_buf = np.empty((n, 3))
        self.f_c_buf = np.empty(n)

    def rows_for(self, agent_id: int) -> int | None:
        return self._row.get(int(agent_id))

    def apply_command(self, cmd: AgentCommand) -> bool:
        row = self._row.get(int(cmd.agent_id))
        if row is None or not self.batch.alive[row]:
            return False
        if cmd.level is CommandLevel.POS:
            self.cmd_level[row] = _LVL_POS
            self.cmd_values[row, :7] = cmd.values
        elif cmd.level is CommandLevel.RATE:
            self.cmd_level[row] = _LVL_RATE
            self.cmd_values[row, :4] = cmd.values
            self.cmd_values[row, 4:] = 0.0
        elif cmd.level is CommandLevel.MOTOR:
            self.cmd_level[row] = _LVL_MOTOR
            self.cmd_values[row, :4] = cmd.values
            self.cmd_values[row, 4:] = 0.0
        else:
            return False
        self._level_dirty = True
        return True

    def add_velocity_overlay(self, offsets: np.ndarray) -> None:
        self.v_overlay += offsets
        self._overlay_active = True

    def retarget_waypoint(self, point, radius: float) -> None:
        d = np.linalg.norm(self.batch.pos - np.asarray(point, dtype=float), axis=1)
        rows = (d < radius) & self.batch.alive
        if rows.any():
            self.cmd_level[rows] = _LVL_POS
            self.cmd_values[rows, :3] = point
            self.cmd_values[rows, 3:6] = 0.0
            self.cmd_values[rows, 6] = quat_yaw(self.batch.quat[rows])
            self._level_dirty = True

    def mark_dead(self, agent_ids: Iterable[int]) -> list[int]:
        killed = []
        for aid in agent_ids:
            row = self._row.get(int(aid))
            if row is not None and self.batch.alive[row]:
                self.batch.alive[row] = False
                killed.append(int(aid))
        return killed

    def _refresh_masks(self) -> None:
        np.equal(self.cmd_level, _LVL_POS, out=self._pos_mask)
        np.equal(self.cmd_level, _LVL_RATE, out=self._rate_mask)
        np.equal(self.cmd_level, _LVL_MOTOR, out=self._motor_mask)
        self._level_dirty = False

    def step(self, dt: float) -> np.ndarray:
        b = self.batch
        if self._level_dirty:
            self._refresh_masks()

        if self._pos_mask.any():
            if self._overlay_active:
                v_sp = self.cmd_values[:, 3:6] + self.v_overlay
            else:
                v_sp = self.cmd_values[:, 3:6]
            sp = PosSetpoint(p_sp=self.cmd_values[:, :3], v_sp=v_sp, yaw_sp=self.cmd_values[:, 6])
            outer = position_outer_loop(b.pos, b.vel, b.quat, b.alive, sp, self.params, self.outer_gains)
            np.copyto(self.omega_sp, outer.setpoint.omega_sp, where=self._pos_mask[:, None])
            np.copyto(self.f_c_sp, outer.setpoint.f_c_sp, where=self._pos_mask)
        if self._rate_mask.any():
            np.copyto(self.omega_sp, self.cmd_values[:, :3], where=self._rate_mask[:, None])
            np.copyto(self.f_c_sp, self.cmd_values[:, 3], where=self._rate_mask)

        f_c, tau = rate_pid_step(b.omega, RateSetpoint(self.omega_sp, self.f_c_sp),
                                 self.rate_gains, dt, self.pid_state, b.alive, self.pid_ws,
                                 tau_out=self.tau_buf, f_c_out=self.f_c_buf)
        mix = mix_to_motors(f_c, tau, self.params, self.quad_ws)
        f_c_cmd, tau_cmd = mix.f_c, mix.tau
        if self._motor_mask.any():
            # raw motor speeds bypass the PID: wrench = G @ f(omega_rpm)
            thrust, _, _ = rotor_thrust_torque(self.cmd_values[:, :4], self.params)
            wrench = thrust @ allocation_matrix(self.params).T
            rows = self._motor_mask & b.alive
            f_c_cmd = f_c_cmd.copy()
            tau_cmd = tau_cmd.copy()
            f_c_cmd[rows] = wrench[rows, 0]
            tau_cmd[rows] = wrench[rows, 1:]
        faults = rk4_step(b, f_c_cmd, tau_cmd, self.params, dt, self.quad_ws)
        if self._overlay_active:
            self.v_overlay[:] = 0.0
            self._overlay_active = False
        return faults

    def snapshot(self, tick: int) -> BatchSnapshot:
        return batch_snapshot(self.batch, tick)


def unicycle_step(batch: AgentBatch, cmd: np.ndarray, params: UnicycleParams, dt: float) -> None:
    """Planar kinematic step with exact arc integration.

    ``cmd`` is (n, 2) columns (v, omega), clamped to the type limits; heading
    is stored as a yaw-only quaternion.  When |omega| is negligible the
    straight-line form is used.  Dead rows are untouched.
    """
    if not dt > 0.0:
        raise ValidationError(f"dt must be positive, got {dt}")
    alive = batch.alive
    v = np.clip(cmd[:, 0], -params.v_max, params.v_max)
    w = np.clip(cmd[:, 1], -params.omega_max, params.omega_max)
    theta0 = quat_yaw(batch.quat)
    theta1 = theta0 + w * dt
    straight = np.abs(w) <= 1e-9
    w_safe = np.where(straight, 1.0, w)
    dx = np.where(straight, v * np.cos(theta0) * dt, v / w_safe * (np.sin(theta1) - np.sin(theta0)))
    dy = np.where(straight, v * np.sin(theta0) * dt, -v / w_safe * (np.cos(theta1) - np.cos(theta0)))
    batch.pos[alive, 0] += dx[alive]
    batch.pos[alive, 1] += dy[alive]
    batch.quat[alive] = yaw_quat(theta1)[alive]
    batch.vel[alive, 0] = (v * np.cos(theta1))[alive]
    batch.vel[alive, 1] = (v * np.sin(theta1))[alive]
    batch.vel[alive, 2] = 0.0
    batch.omega[alive, 2] = w[alive]


class UnicycleGroup:
    """One unicycle type: (v, omega) command columns over a planar batch."""

    kind = "unicycle"

    def __init__(self, type_id: int, batch: AgentBatch, params: UnicycleParams):
        self.type_id = type_id
        self.batch = batch
        self.params = params
        self._row = {int(a): i for i, a in enumerate(batch.agent_ids)}
        self.cmd = np.zeros((batch.n, 2))
        self.v_overlay = np.zeros((batch.n, 3))
        self._overlay_active = False

    def rows_for(self, agent_id: int) -> int | None:
        return self._row.get(int(agent_id))

    def apply_command(self, cmd: AgentCommand) -> bool:
        row = self._row.get(int(cmd.agent_id))
        if row is None or not self.batch.alive[row] or cmd.level is not CommandLevel.UNICYCLE:
            return False
        self.cmd[row] = cmd.values
        return True

    def add_velocity_overlay(self, offsets: np.ndarray) -> None:
        self.v_overlay += offsets
        self._overlay_active = True

    def retarget_waypoint(self, point, radius: float) -> None:
        pass  # unicycles carry no position controller; waypoint steering is a quad feature

    def mark_dead(self, agent_ids: Iterable[int]) -> list[int]:
        killed = []
        for aid in agent_ids:
            row = self._row.get(int(aid))
            if row is not None and self.batch.alive[row]:
                self.batch.alive[row] = False
                killed.append(int(aid))
        return killed

    def step(self, dt: float) -> np.ndarray:
        cmd = self.cmd
        if self._overlay_active:
            # project the influence field onto each heading
            heading = quat_yaw(self.batch.quat)
            along = self.v_overlay[:, 0] * np.cos(heading) + self.v_overlay[:, 1] * np.sin(heading)
            cmd = cmd.copy()
            cmd[:, 0] += along
            self.v_overlay[:] = 0.0
            self._overlay_active = False
        unicycle_step(self.batch, cmd, self.params, dt)
        return np.empty(0, dtype=np.uint64)

    def snapshot(self, tick: int) -> BatchSnapshot:
        return batch_snapshot(self.batch, tick)


@dataclass
class ExitReport:
    ticks: int
    sim_time: float
    alive: dict[int, int]
    wall_s: float
    round_ms_mean: float
    round_ms_sd: float
    collision_drops: int = 0

    def summary(self) -> str:
        alive = ", ".join(f"type {k}: {v}" for k, v in sorted(self.alive.items()))
        return (f"ticks={self.ticks} t={self.sim_time:.3f}s wall={self.wall_s:.3f}s "
                f"round={self.round_ms_mean:.4f}+-{self.round_ms_sd:.4f}ms alive: {alive}")


class World:
    """Owner of all agent state; drives the event -> command -> step -> publish loop."""

    def __init__(self, groups: list, dt: float,
                 collision_config: CollisionConfig | None = None,
                 collision_in_loop: bool = False):
        ids = [int(a) for g in groups for a in g.batch.agent_ids]
        if len(set(ids)) != len(ids):
            raise ValidationError("groups share agent ids")
        self.groups = sorted(groups, key=lambda g: g.type_id)
        self._group_of = {int(a): g for g in self.groups for a in g.batch.agent_ids}
        self.clock = SimClock(dt=dt)
        self.collision_config = collision_config
        self.collision_in_loop = collision_in_loop

        self.pending_events: list[SimEvent] = []
        self.event_log: list[SimEvent] = []
        self._inbox: queue.SimpleQueue = queue.SimpleQueue()
        self.snapshot_subscribers: list[Callable[[WorldSnapshot], None]] = []
        self.event_subscribers: list[Callable[[SimEvent], None]] = []
        self.inline_strategy: Callable[[WorldSnapshot], Iterable[AgentCommand]] | None = None

        self.detector_in: queue.Queue | None = None
        self.detector_out: queue.Queue | None = None
        self.collision_drops = 0
        self._executor: ThreadPoolExecutor | None = None
        n_workers = worker_threads()
        if n_workers > 1 and len(self.groups) > 1:
            self._executor = ThreadPoolExecutor(max_workers=min(n_workers, len(self.groups)),
                                                thread_name_prefix="group")

    # -- wiring ----------------------------------------------------------

    def attach_detector(self) -> None:
        """Create the out-of-loop detector channels (caller runs the task)."""
        self.detector_in = queue.Queue()
        self.detector_out = queue.Queue()

    def submit_commands(self, commands: Iterable[AgentCommand]) -> None:
        """Thread-safe: queue commands for the next tick (latest-wins)."""
        for cmd in commands:
            self._inbox.put(cmd)

    def submit_viewer_input(self, msg: ViewerInputMsg) -> None:
        self._inbox.put(msg)

    # -- state access ------------------------------------------------------

    def snapshot(self) -> WorldSnapshot:
        return WorldSnapshot(tick=self.clock.tick,
                             batches=tuple(g.snapshot(self.clock.tick) for g in self.groups))

    def _snapshot_view(self) -> WorldSnapshot:
        """Zero-copy view for synchronous, read-only consumers."""
        t = self.clock.tick
        return WorldSnapshot(tick=t, batches=tuple(
            BatchSnapshot(tick=t, type_id=g.type_id, agent_ids=g.batch.agent_ids,
                          pos=g.batch.pos, vel=g.batch.vel, quat=g.batch.quat,
                          omega=g.batch.omega, alive=g.batch.alive)
            for g in self.groups))

    def alive_counts(self) -> dict[int, int]:
        return {g.type_id: int(g.batch.alive.sum()) for g in self.groups}

    def state_table_bytes(self) -> bytes:
        """Deterministic byte image of every state column (for bit-compare)."""
        parts = []
        for g in self.groups:
            b = g.batch
            for col in (b.agent_ids, b.alive, b.pos, b.vel, b.quat, b.omega):
                parts.append(np.ascontiguousarray(col).tobytes())
        return b"".join(parts)

    # -- loop phases -------------------------------------------------------

    def _emit(self, event: SimEvent) -> None:
        self.event_log.append(event)
        for sub in self.event_subscribers:
            sub(event)

    def queue_death(self, agent_ids: Iterable[int], kind: SimEventKind, tick: int) -> None:
        ids = tuple(int(i) for i in agent_ids)
        if ids:
            self.pending_events.append(SimEvent(tick=tick, kind=kind, agent_ids=ids))

    def _drain_reports(self) -> None:
        if self.detector_out is None:
            return
        while True:
            try:
                report = self.detector_out.get_nowait()
            except queue.Empty:
                return
            if report is None:
                self.detector_out = None
                return
            self.collision_drops += report.dropped
            self._queue_collision(report)

    def _queue_collision(self, report: CollisionReport) -> None:
        ids = sorted({i for pair in report.collisions for i in pair})
        if ids:
            self.queue_death(ids, SimEventKind.COLLISION_DEATH, report.tick)

    def _apply_events(self) -> None:
        for event in self.pending_events:
            killed: list[int] = []
            by_group: dict[int, list[int]] = {}
            for aid in event.agent_ids:
                g = self._group_of.get(aid)
                if g is not None:
                    by_group.setdefault(id(g), []).append(aid)
            for g in self.groups:
                ids = by_group.get(id(g))
                if ids:
                    killed.extend(g.mark_dead(ids))
            if killed:
                self._emit(SimEvent(tick=event.tick, kind=event.kind, agent_ids=tuple(killed)))
        self.pending_events.clear()

    def _apply_inbox(self) -> None:
        rejected: list[int] = []
        while True:
            try:
                item = self._inbox.get_nowait()
            except queue.Empty:
                break
            if isinstance(item, AgentCommand):
                g = self._group_of.get(int(item.agent_id))
                if g is None or not g.apply_command(item):
                    rejected.append(int(item.agent_id))
            elif isinstance(item, ViewerInputMsg):
                self._apply_viewer_input(item)
        if rejected:
            self._emit(SimEvent(tick=self.clock.tick, kind=SimEventKind.COMMAND_REJECTED,
                                agent_ids=tuple(rejected)))

    def _apply_viewer_input(self, msg: ViewerInputMsg) -> None:
        if msg.mode is InfluenceMode.WAYPOINT:
            for g in self.groups:
                g.retarget_waypoint(msg.world_point, msg.radius)
            return
        for g in self.groups:
            offsets = viewer_velocity_offsets(msg, g.batch.pos, g.batch.alive)
            if offsets.any():
                g.add_velocity_overlay(offsets)

    def _step_groups(self) -> None:
        dt = self.clock.dt
        if self._executor is not None:
            jobs = [(g, self._executor.submit(g.step, dt)) for g in self.groups]
            results = [(g, self._collect(g, f.result)) for g, f in jobs]
        else:
            results = [(g, self._collect(g, lambda g=g: g.step(dt))) for g in self.groups]
        for g, fault_ids in results:
            if fault_ids.size:
                self._emit(SimEvent(tick=self.clock.tick, kind=SimEventKind.FAULT_DEATH,
                                    agent_ids=tuple(int(i) for i in fault_ids)))

    def _collect(self, group, step_result) -> np.ndarray:
        """Run one group step; a crashed group loses its agents, not the loop."""
        try:
            return step_result()
        except Exception:
            log.exception("group %d step failed; marking its agents fault-dead", group.type_id)
            live = group.batch.agent_ids[group.batch.alive]
            killed = group.mark_dead(live.tolist())
            return np.asarray(killed, dtype=np.uint64)

    def _publish(self) -> None:
        want_detector = self.detector_in is not None
        if not (want_detector or self.snapshot_subscribers):
            return
        snap = self.snapshot()
        if want_detector:
            self.detector_in.put(snap)
        for sub in self.snapshot_subscribers:
            sub(snap)

    def tick(self) -> None:
        """One loop round; see the module docstring for the phase order."""
        self._drain_reports()
        self._apply_events()
        if self.inline_strategy is not None:
            self.submit_commands(self.inline_strategy(self._snapshot_view()))
        self._apply_inbox()
        self._step_groups()
        if self.collision_in_loop and self.collision_config is not None:
            report = detect(self._snapshot_view(), self.collision_config)
            self._queue_collision(report)
            self._apply_events()
        self._publish()
        self.clock.advance()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None


def build_world(config: SimConfig) -> World:
    """Construct groups and collision wiring from a parsed config."""
    groups = []
    id_base = 0
    radii: dict[int, float] = {}
    for type_id, spec in enumerate(config.types):
        if spec.count == 0:
            continue
        pos, yaw = layout_poses(spec.layout, spec.count, seed=config.seed + type_id)
        batch = batch_create(type_id, spec.count, pos, quat=yaw_quat(yaw), id_base=id_base)
        id_base += spec.count
        if spec.kind == "quadrotor":
            groups.append(QuadGroup(type_id, batch, spec.quad_params()))
        else:
            try:
                uparams = UnicycleParams(**spec.params) if spec.params else UnicycleParams()
            except TypeError as exc:
                raise ConfigError(f"type {spec.name}: bad unicycle params: {exc}") from exc
            groups.append(UnicycleGroup(type_id, batch, uparams))
        radii[type_id] = spec.r_collide

    collision_config = None
    if config.collision.enabled and radii:
        collision_config = CollisionConfig(r_collide=radii, r_sense=config.collision.r_sense,
                                           cell=config.collision.cell)
    world = World(groups, dt=config.dt, collision_config=collision_config,
                  collision_in_loop=config.collision.in_loop)

    if config.algo.in_loop and config.algo.strategy:
        from .client import build_strategy

        world.inline_strategy = build_strategy(config.algo.strategy, config.algo.params,
                                               config.dt, world.snapshot())
    return world


def run(config: SimConfig, *, stop: threading.Event | None = None,
        world: World | None = None, endpoints=None,
        max_wall_s: float | None = None) -> ExitReport:
    """Run the loop to the tick limit (or stop signal) and report statistics.

    ``realtime_factor`` r > 0 paces each round to dt/r wall seconds; r = 0
    runs as fast as possible.  The out-of-loop collision detector is started
    automatically when collision is enabled.
    """
    world = world or build_world(config)
    stop = stop or threading.Event()
    detector_thread = None
    if world.collision_config is not None and not world.collision_in_loop:
        world.attach_detector()
        detector_thread = threading.Thread(
            target=run_detector, args=(world.detector_in, world.detector_out, world.collision_config),
            name="collision-detector", daemon=True)
        detector_thread.start()

    durations: list[float] = []
    t_start = time.perf_counter()
    period = (config.dt / config.realtime_factor) if config.realtime_factor > 0 else 0.0
    next_deadline = t_start + period
    try:
        while not stop.is_set():
            if config.tick_limit and world.clock.tick >= config.tick_limit:
                break
            if max_wall_s is not None and time.perf_counter() - t_start > max_wall_s:
                break
            t0 = time.perf_counter()
            world.tick()
            durations.append(time.perf_counter() - t0)
            if period > 0.0:
                delay = next_deadline - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
                next_deadline += period
    finally:
        if world.detector_in is not None:
            world.detector_in.put(None)
        if detector_thread is not None:
            detector_thread.join(timeout=5.0)
        world.close()
        if endpoints is not None:
            endpoints.close()

    wall = time.perf_counter() - t_start
    arr = np.asarray(durations) * 1e3
    return ExitReport(
        ticks=world.clock.tick,
        sim_time=world.clock.t,
        alive=world.alive_counts(),
        wall_s=wall,
        round_ms_mean=float(arr.mean()) if arr.size else 0.0,
        round_ms_sd=float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
        collision_drops=world.collision_drops,
    )
