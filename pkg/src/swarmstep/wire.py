"""Wire protocol shared by the three sides: framing and message codecs.

Frames are ``u32 length (little-endian) | u8 msg_type | payload`` where the
length counts the type byte plus the payload.  Snapshots are binary and
columnar (they dominate bandwidth); commands, events and control messages
are compact JSON for debuggability.  Core state is float64; the wire carries
float32 (documented lossy) with quaternions canonicalized to w >= 0.

The exact byte layout is documented in PROTOCOL.md and pinned by golden-byte
fixtures under tests/golden/.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ProtocolError
from .quat import quat_canonical
from .state import BatchSnapshot, WorldSnapshot

__all__ = [
    "MSG_SNAPSHOT", "MSG_COMMAND", "MSG_EVENT", "MSG_VIEWER_INPUT", "MSG_CONTROL",
    "PROTOCOL_VERSION", "DEFAULT_ALGO_PORT", "DEFAULT_VIEWER_PORT", "DEFAULT_WS_PORT",
    "CommandLevel", "AgentCommand", "CommandMsg", "EventMsg", "ViewerInputMsg", "ControlMsg",
    "encode_frame", "FrameDecoder",
    "encode_snapshot", "decode_snapshot",
    "encode_command", "decode_command",
    "encode_event", "decode_event",
    "encode_viewer_input", "decode_viewer_input",
    "encode_control", "decode_control",
    "decode_message", "viewer_velocity_offsets",
]

MSG_SNAPSHOT = 0x01
MSG_COMMAND = 0x02
MSG_EVENT = 0x03
MSG_VIEWER_INPUT = 0x04
MSG_CONTROL = 0x05

PROTOCOL_VERSION = 1
DEFAULT_ALGO_PORT = 9001
DEFAULT_VIEWER_PORT = 9002
DEFAULT_WS_PORT = 9003

MAX_FRAME_LEN = 64 * 1024 * 1024  # length field cap, 64 MiB
_HEADER = struct.Struct("<IB")


class CommandLevel(str, Enum):
    """Command abstraction levels accepted by the central side."""

    POS = "pos"          # 7 values: p_sp (3), v_sp (3), yaw_sp
    RATE = "rate"        # 4 values: omega_sp (3), f_c
    MOTOR = "motor"      # 4 values: per-rotor speed (RPM)
    UNICYCLE = "unicycle"  # 2 values: v, omega

    @property
    def n_values(self) -> int:
        return {"pos": 7, "rate": 4, "motor": 4, "unicycle": 2}[self.value]


@dataclass(frozen=True)
class AgentCommand:
    agent_id: int
    level: CommandLevel
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != self.level.n_values:
            raise ProtocolError(
                f"level {self.level.value} takes {self.level.n_values} values, got {len(self.values)}")


@dataclass(frozen=True)
class CommandMsg:
    commands: tuple[AgentCommand, ...]
    tick_hint: int = 0


@dataclass(frozen=True)
class EventMsg:
    tick: int
    kind: str
    agent_ids: tuple[int, ...]


class InfluenceMode(str, Enum):
    ATTRACT = "attract"
    REPEL = "repel"
    WAYPOINT = "waypoint"


_MODE_CODES = {InfluenceMode.ATTRACT: 0, InfluenceMode.REPEL: 1, InfluenceMode.WAYPOINT: 2}
_CODE_MODES = {v: k for k, v in _MODE_CODES.items()}


@dataclass(frozen=True)
class ViewerInputMsg:
    mode: InfluenceMode
    world_point: tuple[float, float, float]
    radius: float
    strength: float

    def __post_init__(self):
        if self.radius < 0.0 or self.strength < 0.0:
            raise ProtocolError("radius and strength must be non-negative")


@dataclass(frozen=True)
class ControlMsg:
    op: str  # start | stop | set_param | hello
    params: dict = field(default_factory=dict)


def encode_frame(msg_type: int, payload: bytes) -> bytes:
    length = 1 + len(payload)
    if length > MAX_FRAME_LEN:
        raise ProtocolError(f"frame of {length} bytes exceeds the {MAX_FRAME_LEN} cap")
    return _HEADER.pack(length, msg_type) + payload


class FrameDecoder:
    """Incremental frame parser: feed byte chunks, collect (type, payload) frames.

    Tolerates arbitrary segmentation.  Unknown message types are returned
    as-is (skippable via the length field); an oversized length raises
    ``ProtocolError``.
    """

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[int, bytes]]:
        self._buf.extend(data)
        frames = []
        while True:
            if len(self._buf) < 5:
                break
            length = struct.unpack_from("<I", self._buf, 0)[0]
            if length < 1 or length > MAX_FRAME_LEN:
                raise ProtocolError(f"bad frame length {length}")
            if len(self._buf) < 4 + length:
                break
            msg_type = self._buf[4]
            payload = bytes(self._buf[5:4 + length])
            del self._buf[:4 + length]
            frames.append((msg_type, payload))
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)


# --- snapshot: binary columnar -----------------------------------------------

def encode_snapshot(snapshot: WorldSnapshot) -> bytes:
    """SnapshotMsg frame: tick u64, then per-type sections ordered by type_id.

    Section: type_id u16, n u32, agent_ids u64*n, alive u8*n, pos f32*3n,
    vel f32*3n, quat f32*4n, omega f32*3n; all little-endian, each column
    contiguous.  Quaternions are canonicalized (w >= 0) on the wire.
    """
    parts = [struct.pack("<Q", snapshot.tick)]
    for b in sorted(snapshot.batches, key=lambda s: s.type_id):
        parts.append(struct.pack("<HI", b.type_id, b.n))
        parts.append(b.agent_ids.astype("<u8").tobytes())
        parts.append(b.alive.astype("<u1").tobytes())
        parts.append(b.pos.astype("<f4").tobytes())
        parts.append(b.vel.astype("<f4").tobytes())
        parts.append(quat_canonical(b.quat).astype("<f4").tobytes())
        parts.append(b.omega.astype("<f4").tobytes())
    return encode_frame(MSG_SNAPSHOT, b"".join(parts))


def decode_snapshot(payload: bytes) -> WorldSnapshot:
    if len(payload) < 8:
        raise ProtocolError("snapshot payload shorter than its tick header")
    tick = struct.unpack_from("<Q", payload, 0)[0]
    off = 8
    batches = []
    while off < len(payload):
        if off + 6 > len(payload):
            raise ProtocolError("truncated snapshot section header")
        type_id, n = struct.unpack_from("<HI", payload, off)
        off += 6
        need = n * (8 + 1 + 4 * (3 + 3 + 4 + 3))
        if off + need > len(payload):
            raise ProtocolError("truncated snapshot section body")

        def col(dtype, count, width):
            nonlocal off
            nbytes = count * width * np.dtype(dtype).itemsize
            arr = np.frombuffer(payload, dtype=dtype, count=count * width, offset=off)
            off += nbytes
            return arr.reshape(count, width) if width > 1 else arr

        agent_ids = col("<u8", n, 1).astype(np.uint64)
        alive = col("<u1", n, 1).astype(bool)
        pos = col("<f4", n, 3).astype(float)
        vel = col("<f4", n, 3).astype(float)
        quat = col("<f4", n, 4).astype(float)
        omega = col("<f4", n, 3).astype(float)
        for arr in (agent_ids, alive, pos, vel, quat, omega):
            arr.setflags(write=False)
        batches.append(BatchSnapshot(tick=tick, type_id=type_id, agent_ids=agent_ids,
                                     alive=alive, pos=pos, vel=vel, quat=quat, omega=omega))
    return WorldSnapshot(tick=tick, batches=tuple(batches))


# --- textual messages ---------------------------------------------------------

def _json_bytes(obj) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode()


def _json_load(payload: bytes, what: str) -> dict:
    try:
        obj = json.loads(payload.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed {what} payload: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError(f"{what} payload must be a JSON object")
    return obj


def encode_command(msg: CommandMsg) -> bytes:
    payload = _json_bytes({
        "tick_hint": msg.tick_hint,
        "commands": [
            {"agent_id": c.agent_id, "level": c.level.value, "values": list(c.values)}
            for c in msg.commands
        ],
    })
    return encode_frame(MSG_COMMAND, payload)


def decode_command(payload: bytes) -> CommandMsg:
    obj = _json_load(payload, "command")
    try:
        commands = tuple(
            AgentCommand(agent_id=int(c["agent_id"]), level=CommandLevel(c["level"]),
                         values=tuple(float(v) for v in c["values"]))
            for c in obj.get("commands", ())
        )
        return CommandMsg(commands=commands, tick_hint=int(obj.get("tick_hint", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed command message: {exc}") from exc


def encode_event(msg: EventMsg) -> bytes:
    return encode_frame(MSG_EVENT, _json_bytes(
        {"tick": msg.tick, "kind": msg.kind, "agent_ids": list(msg.agent_ids)}))


def decode_event(payload: bytes) -> EventMsg:
    obj = _json_load(payload, "event")
    try:
        return EventMsg(tick=int(obj["tick"]), kind=str(obj["kind"]),
                        agent_ids=tuple(int(i) for i in obj["agent_ids"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed event message: {exc}") from exc


_VIEWER_FMT = struct.Struct("<B3fff")


def encode_viewer_input(msg: ViewerInputMsg) -> bytes:
    payload = _VIEWER_FMT.pack(_MODE_CODES[msg.mode], *msg.world_point, msg.radius, msg.strength)
    return encode_frame(MSG_VIEWER_INPUT, payload)


def decode_viewer_input(payload: bytes) -> ViewerInputMsg:
    if len(payload) != _VIEWER_FMT.size:
        raise ProtocolError(f"viewer input payload must be {_VIEWER_FMT.size} bytes")
    code, px, py, pz, radius, strength = _VIEWER_FMT.unpack(payload)
    if code not in _CODE_MODES:
        raise ProtocolError(f"unknown influence mode code {code}")
    return ViewerInputMsg(mode=_CODE_MODES[code], world_point=(px, py, pz),
                          radius=radius, strength=strength)


def encode_control(msg: ControlMsg) -> bytes:
    obj = {"op": msg.op}
    obj.update(msg.params)
    return encode_frame(MSG_CONTROL, _json_bytes(obj))


def decode_control(payload: bytes) -> ControlMsg:
    obj = _json_load(payload, "control")
    try:
        op = str(obj.pop("op"))
    except KeyError as exc:
        raise ProtocolError("control message missing op") from exc
    return ControlMsg(op=op, params=obj)


_DECODERS = {
    MSG_SNAPSHOT: decode_snapshot,
    MSG_COMMAND: decode_command,
    MSG_EVENT: decode_event,
    MSG_VIEWER_INPUT: decode_viewer_input,
    MSG_CONTROL: decode_control,
}


def decode_message(msg_type: int, payload: bytes):
    """Decode a frame into its typed message, or return None for unknown types."""
    decoder = _DECODERS.get(msg_type)
    return decoder(payload) if decoder else None


# --- viewer influence semantics -----------------------------------------------

def viewer_velocity_offsets(msg: ViewerInputMsg, pos: np.ndarray, alive: np.ndarray) -> np.ndarray:
    """Velocity-field offsets for attract/repel influence over one batch.

    ``v_off = +/- strength * (1 - d/radius) * unit(world_point - p)`` for
    alive agents with ``d < radius``; zero elsewhere, with the zero-distance
    singularity guarded.  Waypoint mode has no velocity field (the caller
    retargets setpoints instead).
    """
    n = pos.shape[0]
    out = np.zeros((n, 3))
    if msg.mode is InfluenceMode.WAYPOINT or msg.radius <= 0.0:
        return out
    delta = np.asarray(msg.world_point, dtype=float) - pos
    d = np.linalg.norm(delta, axis=1)
    inside = (d < msg.radius) & (d > 1e-12) & alive
    if not inside.any():
        return out
    sign = 1.0 if msg.mode is InfluenceMode.ATTRACT else -1.0
    scale = sign * msg.strength * (1.0 - d[inside] / msg.radius) / d[inside]
    out[inside] = delta[inside] * scale[:, None]
    return out
