"""Central-side socket fabric: TCP endpoints, WebSocket binding, broadcaster.

Every client connection runs on its own reader/writer threads and can never
stall the simulation loop: the loop hands snapshots to a one-slot mailbox,
a single broadcaster thread encodes each snapshot once, and per-client
outbound queues drop the oldest snapshot beyond a small cap (latest-wins).
Inbound frames are decoded per connection and funneled into the world's
command inbox; a malformed frame closes that connection only.
"""

from __future__ import annotations

import logging
import socket
import threading
from collections import deque
from typing import Callable

from .errors import ProtocolError, SwarmstepError
from .state import WorldSnapshot
from .wire import (CommandMsg, ControlMsg, FrameDecoder, PROTOCOL_VERSION, ViewerInputMsg,
                   decode_message, encode_event, encode_snapshot, EventMsg)

log = logging.getLogger("swarmstep.server")

SNAPSHOT_QUEUE_CAP = 4

__all__ = ["Endpoints", "TcpEndpoint", "serve_endpoint", "SnapshotRecorder", "SNAPSHOT_QUEUE_CAP"]


class _OutQueue:
    """Per-client outbound frames; snapshots beyond the cap drop oldest-first."""

    def __init__(self, snapshot_cap: int = SNAPSHOT_QUEUE_CAP):
        self._cond = threading.Condition()
        self._frames: deque[tuple[bool, bytes]] = deque()
        self._snapshots = 0
        self._cap = snapshot_cap
        self.closed = False
        self.dropped = 0

    def push(self, frame: bytes, is_snapshot: bool) -> None:
        with self._cond:
            if self.closed:
                return
            if is_snapshot:
                while self._snapshots >= self._cap:
                    for i, (snap, _) in enumerate(self._frames):
                        if snap:
                            del self._frames[i]
                            self._snapshots -= 1
                            self.dropped += 1
                            break
                self._snapshots += 1
            self._frames.append((is_snapshot, frame))
            self._cond.notify()

    def pop(self, timeout: float = 0.5) -> bytes | None:
        with self._cond:
            if not self._frames:
                self._cond.wait(timeout)
            if not self._frames:
                return None
            is_snapshot, frame = self._frames.popleft()
            if is_snapshot:
                self._snapshots -= 1
            return frame

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()


class _TcpClient:
    def __init__(self, sock: socket.socket, addr, role: str,
                 on_message: Callable, on_close: Callable):
        self.sock = sock
        self.addr = addr
        self.role = role
        self.out = _OutQueue()
        self._on_message = on_message
        self._on_close = on_close
        self._writer = threading.Thread(target=self._write_loop, daemon=True,
                                        name=f"{role}-writer-{addr[1]}")
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name=f"{role}-reader-{addr[1]}")

    def start(self) -> None:
        self._writer.start()
        self._reader.start()

    def _write_loop(self) -> None:
        try:
            while not self.out.closed:
                frame = self.out.pop()
                if frame is not None:
                    self.sock.sendall(frame)
        except OSError:
            pass
        finally:
            self.close()

    def _read_loop(self) -> None:
        decoder = FrameDecoder()
        try:
            while not self.out.closed:
                data = self.sock.recv(65536)
                if not data:
                    break
                for msg_type, payload in decoder.feed(data):
                    msg = decode_message(msg_type, payload)
                    if msg is not None:
                        self._on_message(msg, self.role)
        except ProtocolError as exc:
            log.warning("%s client %s: protocol error: %s", self.role, self.addr, exc)
        except OSError:
            pass
        finally:
            self.close()

    def close(self) -> None:
        if not self.out.closed:
            self.out.close()
            try:
                self.sock.close()
            except OSError:
                pass
            self._on_close(self)


class TcpEndpoint:
    """Listening socket for one role; fans snapshots out to every client."""

    def __init__(self, host: str, port: int, role: str, on_message: Callable):
        self.role = role
        self._on_message = on_message
        self._clients: list[_TcpClient] = []
        self._lock = threading.Lock()
        self._closed = False
        try:
            self._listener = socket.create_server((host, port))
        except OSError as exc:
            raise SwarmstepError(f"cannot bind {role} endpoint on {host}:{port}: {exc}") from exc
        self.port = self._listener.getsockname()[1]
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True,
                                               name=f"{role}-accept")
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                sock, addr = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            client = _TcpClient(sock, addr, self.role, self._on_message, self._forget)
            with self._lock:
                self._clients.append(client)
            client.start()
            log.info("%s client connected from %s", self.role, addr)

    def _forget(self, client: _TcpClient) -> None:
        with self._lock:
            if client in self._clients:
                self._clients.remove(client)
        log.info("%s client %s disconnected", self.role, client.addr)

    def clients(self) -> list[_TcpClient]:
        with self._lock:
            return list(self._clients)

    def broadcast(self, frame: bytes, is_snapshot: bool) -> None:
        for client in self.clients():
            client.out.push(frame, is_snapshot)

    def close(self) -> None:
        self._closed = True
        try:
            self._listener.close()
        except OSError:
            pass
        for client in self.clients():
            client.close()


def serve_endpoint(host: str, port: int, role: str, on_message: Callable) -> TcpEndpoint:
    """Open one TCP endpoint (role 'algo' or 'viewer')."""
    return TcpEndpoint(host, port, role, on_message)


class _WsClientAdapter:
    def __init__(self, conn):
        self.conn = conn
        self.out = _OutQueue()


class WsEndpoint:
    """WebSocket binding: the same frames, one frame per binary message."""

    def __init__(self, host: str, port: int, on_message: Callable):
        from websockets.sync.server import serve

        self._on_message = on_message
        self._clients: list[_WsClientAdapter] = []
        self._lock = threading.Lock()
        try:
            self._server = serve(self._handler, host, port)
        except OSError as exc:
            raise SwarmstepError(f"cannot bind websocket endpoint on {host}:{port}: {exc}") from exc
        self.port = self._server.socket.getsockname()[1]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True,
                                        name="ws-serve")
        self._thread.start()

    def _handler(self, conn) -> None:
        adapter = _WsClientAdapter(conn)
        with self._lock:
            self._clients.append(adapter)
        writer = threading.Thread(target=self._write_loop, args=(adapter,), daemon=True)
        writer.start()
        decoder = FrameDecoder()
        try:
            while True:
                data = conn.recv()
                if isinstance(data, str):
                    continue
                for msg_type, payload in decoder.feed(data):
                    msg = decode_message(msg_type, payload)
                    if msg is not None:
                        self._on_message(msg, "viewer")
        except Exception:
            pass
        finally:
            adapter.out.close()
            with self._lock:
                if adapter in self._clients:
                    self._clients.remove(adapter)

    def _write_loop(self, adapter: _WsClientAdapter) -> None:
        try:
            while not adapter.out.closed:
                frame = adapter.out.pop()
                if frame is not None:
                    adapter.conn.send(frame)
        except Exception:
            adapter.out.close()

    def broadcast(self, frame: bytes, is_snapshot: bool) -> None:
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            c.out.push(frame, is_snapshot)

    def close(self) -> None:
        self._server.shutdown()
        with self._lock:
            clients = list(self._clients)
        for c in clients:
            c.out.close()


class _Mailbox:
    """One-slot latest-wins snapshot handoff from the loop to the broadcaster."""

    def __init__(self):
        self._cond = threading.Condition()
        self._item: WorldSnapshot | None = None
        self.closed = False
        self.dropped = 0

    def put(self, item: WorldSnapshot) -> None:
        with self._cond:
            if self._item is not None:
                self.dropped += 1
            self._item = item
            self._cond.notify()

    def take(self, timeout: float = 0.5) -> WorldSnapshot | None:
        with self._cond:
            if self._item is None:
                self._cond.wait(timeout)
            item, self._item = self._item, None
            return item

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()


class SnapshotRecorder:
    """Writes every published snapshot frame to a file, in order."""

    def __init__(self, path: str):
        self._file = open(path, "wb")
        self._q: deque[WorldSnapshot] = deque()
        self._cond = threading.Condition()
        self._closed = False
        self._thread = threading.Thread(target=self._loop, daemon=True, name="recorder")
        self._thread.start()

    def publish(self, snap: WorldSnapshot) -> None:
        with self._cond:
            if not self._closed:
                self._q.append(snap)
                self._cond.notify()

    def _loop(self) -> None:
        while True:
            with self._cond:
                while not self._q and not self._closed:
                    self._cond.wait(0.5)
                if not self._q and self._closed:
                    break
                snap = self._q.popleft()
            self._file.write(encode_snapshot(snap))

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        self._thread.join(timeout=10.0)
        self._file.close()


class Endpoints:
    """Lifecycle facade: broadcaster thread plus algo/viewer/ws endpoints."""

    def __init__(self, world, net, stop_event: threading.Event | None = None):
        self.world = world
        self.stop_event = stop_event or threading.Event()
        self._mailbox = _Mailbox()
        self.algo = TcpEndpoint(net.host, net.algo_port, "algo", self._on_message)
        self.viewer = TcpEndpoint(net.host, net.viewer_port, "viewer", self._on_message)
        # ws_port < 0 disables the WebSocket binding; 0 binds an ephemeral port
        self.ws = WsEndpoint(net.host, net.ws_port, self._on_message) if net.ws_port >= 0 else None
        self._bcast_thread = threading.Thread(target=self._broadcast_loop, daemon=True,
                                              name="broadcaster")
        self._bcast_thread.start()
        world.snapshot_subscribers.append(self._mailbox.put)
        world.event_subscribers.append(self._on_event)

    # inbound ------------------------------------------------------------

    def _on_message(self, msg, role: str) -> None:
        if isinstance(msg, CommandMsg):
            self.world.submit_commands(msg.commands)
        elif isinstance(msg, ViewerInputMsg):
            self.world.submit_viewer_input(msg)
        elif isinstance(msg, ControlMsg):
            self._on_control(msg)

    def _on_control(self, msg: ControlMsg) -> None:
        if msg.op == "stop":
            self.stop_event.set()
        elif msg.op == "hello":
            version = msg.params.get("version")
            if version != PROTOCOL_VERSION:
                log.warning("client hello with unsupported protocol version %r", version)

    # outbound -----------------------------------------------------------

    def _on_event(self, event) -> None:
        frame = encode_event(EventMsg(tick=event.tick, kind=event.kind.value,
                                      agent_ids=event.agent_ids))
        self._fanout(frame, is_snapshot=False)

    def _broadcast_loop(self) -> None:
        while not self._mailbox.closed:
            snap = self._mailbox.take()
            if snap is None:
                continue
            self._fanout(encode_snapshot(snap), is_snapshot=True)

    def _fanout(self, frame: bytes, is_snapshot: bool) -> None:
        self.algo.broadcast(frame, is_snapshot)
        self.viewer.broadcast(frame, is_snapshot)
        if self.ws is not None:
            self.ws.broadcast(frame, is_snapshot)

    def close(self) -> None:
        self._mailbox.close()
        self.algo.close()
        self.viewer.close()
        if self.ws is not None:
            self.ws.close()
        self._bcast_thread.join(timeout=5.0)
