"""Algorithm-side SDK: snapshot-in / commands-out over the algo endpoint.

The client loop is deliberately decoupled from the simulation rate: the
central side keeps running while a strategy thinks, and stale snapshots are
dropped server-side rather than queued.  ``circle_swarm_strategy`` is the
bundled example that flies every agent along a phased circle.
"""

from __future__ import annotations

import socket
import time
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .control import circle_reference
from .errors import ConfigError, ProtocolError, SwarmstepError
from .state import WorldSnapshot
from .wire import (AgentCommand, CommandLevel, CommandMsg, ControlMsg, FrameDecoder,
                   MSG_SNAPSHOT, PROTOCOL_VERSION, decode_snapshot, encode_command,
                   encode_control)

__all__ = ["AlgoClient", "CircleLayout", "make_circle_layout", "circle_swarm_strategy",
           "build_strategy"]

Strategy = Callable[[WorldSnapshot], Iterable[AgentCommand]]


@dataclass(frozen=True)
class CircleLayout:
    """Per-agent circle assignment plus the tick -> time conversion."""

    dt: float
    omega: float
    agent_ids: np.ndarray
    radii: np.ndarray
    phases: np.ndarray
    z: np.ndarray


def make_circle_layout(snapshot: WorldSnapshot, dt: float, radius: float = 5.0,
                       omega: float = 0.3, z: float = 10.0) -> CircleLayout:
    """Assign evenly spaced phases on one circle to every agent in the snapshot."""
    ids = np.concatenate([b.agent_ids for b in snapshot.batches]) if snapshot.batches \
        else np.empty(0, dtype=np.uint64)
    n = max(len(ids), 1)
    phases = 2.0 * np.pi * np.arange(len(ids)) / n
    return CircleLayout(dt=dt, omega=omega, agent_ids=ids,
                        radii=np.full(len(ids), float(radius)), phases=phases,
                        z=np.full(len(ids), float(z)))


def circle_swarm_strategy(snapshot: WorldSnapshot, layout: CircleLayout) -> list[AgentCommand]:
    """Position-level setpoints on the layout circles at the snapshot's time."""
    t = snapshot.tick * layout.dt
    alive: dict[int, bool] = {}
    for b in snapshot.batches:
        for aid, a in zip(b.agent_ids.tolist(), b.alive.tolist()):
            alive[aid] = a
    ref = circle_reference(t, layout.radii, layout.omega, layout.z, layout.phases)
    commands = []
    yaw = np.atleast_1d(ref.yaw_sp)
    for i, aid in enumerate(layout.agent_ids.tolist()):
        if not alive.get(aid, False):
            continue
        commands.append(AgentCommand(
            agent_id=int(aid), level=CommandLevel.POS,
            values=(float(ref.p_sp[i, 0]), float(ref.p_sp[i, 1]), float(ref.p_sp[i, 2]),
                    float(ref.v_sp[i, 0]), float(ref.v_sp[i, 1]), float(ref.v_sp[i, 2]),
                    float(yaw[i]))))
    return commands


def build_strategy(name: str, params: dict, dt: float, snapshot: WorldSnapshot) -> Strategy:
    """Resolve a config-named strategy (used for in-loop algorithm placement)."""
    if name == "circle":
        layout = make_circle_layout(snapshot, dt,
                                    radius=float(params.get("radius", 5.0)),
                                    omega=float(params.get("omega", 0.3)),
                                    z=float(params.get("z", 10.0)))
        return lambda snap: circle_swarm_strategy(snap, layout)
    raise ConfigError(f"unknown strategy {name!r}")


class AlgoClient:
    """TCP client for the algorithm endpoint with bounded reconnect."""

    def __init__(self, host: str = "127.0.0.1", port: int = 9001,
                 max_retries: int = 5, backoff_s: float = 0.2, timeout_s: float = 10.0):
        self.host = host
        self.port = port
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self._sock: socket.socket | None = None
        self._decoder = FrameDecoder()

    def connect(self) -> None:
        last_exc: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                sock = socket.create_connection((self.host, self.port), timeout=self.timeout_s)
                sock.settimeout(self.timeout_s)
                self._sock = sock
                self._decoder = FrameDecoder()
                self.send_raw(encode_control(ControlMsg(op="hello", params={"version": PROTOCOL_VERSION,
                                                                            "role": "algo"})))
                return
            except OSError as exc:
                last_exc = exc
                time.sleep(self.backoff_s * (2 ** attempt))
        raise SwarmstepError(f"could not reach {self.host}:{self.port}: {last_exc}")

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def send_raw(self, frame: bytes) -> None:
        if self._sock is None:
            raise SwarmstepError("client is not connected")
        self._sock.sendall(frame)

    def send_commands(self, commands: Iterable[AgentCommand], tick_hint: int = 0) -> None:
        cmds = tuple(commands)
        if cmds:
            self.send_raw(encode_command(CommandMsg(commands=cmds, tick_hint=tick_hint)))

    def send_stop(self) -> None:
        self.send_raw(encode_control(ControlMsg(op="stop")))

    def recv_snapshot(self) -> WorldSnapshot:
        """Block until the next snapshot frame arrives (other frames skipped)."""
        if self._sock is None:
            raise SwarmstepError("client is not connected")
        while True:
            data = self._sock.recv(65536)
            if not data:
                raise ConnectionError("endpoint closed the connection")
            for msg_type, payload in self._decoder.feed(data):
                if msg_type == MSG_SNAPSHOT:
                    return decode_snapshot(payload)

    def run(self, strategy: Strategy, max_snapshots: int | None = None) -> int:
        """SDK loop: snapshot -> strategy -> commands, until the stream ends.

        Connection loss triggers a bounded reconnect; a strategy exception
        propagates to the caller (the simulation is unaffected).  Returns the
        number of snapshots handled.
        """
        if self._sock is None:
            self.connect()
        handled = 0
        while max_snapshots is None or handled < max_snapshots:
            try:
                snap = self.recv_snapshot()
            except (ConnectionError, OSError, ProtocolError):
                self.close()
                self.connect()
                continue
            commands = strategy(snap)
            if commands:
                self.send_commands(commands, tick_hint=snap.tick)
            handled += 1
        return handled

    def __enter__(self):
        if self._sock is None:
            self.connect()
        return self

    def __exit__(self, *exc):
        self.close()


def main(argv=None) -> int:
    """Run the circle-swarm example client against a live simulation."""
    import argparse

    parser = argparse.ArgumentParser(prog="swarmstep.client",
                                     description="example algorithm-side client (circle swarm)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=9001)
    parser.add_argument("--radius", type=float, default=5.0)
    parser.add_argument("--omega", type=float, default=0.3)
    parser.add_argument("--z", type=float, default=10.0)
    parser.add_argument("--dt", type=float, default=0.002, help="sim dt for tick->time conversion")
    parser.add_argument("--snapshots", type=int, default=0, help="stop after N snapshots (0 = run)")
    args = parser.parse_args(argv)

    client = AlgoClient(host=args.host, port=args.port)
    client.connect()
    first = client.recv_snapshot()
    layout = make_circle_layout(first, args.dt, radius=args.radius, omega=args.omega, z=args.z)
    try:
        client.run(lambda snap: circle_swarm_strategy(snap, layout),
                   max_snapshots=args.snapshots or None)
    except KeyboardInterrupt:
        pass
    finally:
        client.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
