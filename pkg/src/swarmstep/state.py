"""Columnar agent state: the all-states table every other module reads.

One :class:`AgentBatch` holds the full state of one homogeneous agent type in
structure-of-arrays layout.  The batch is single-owner mutable (only the
central loop writes it); :func:`batch_snapshot` produces deep immutable
copies that are safe to hand to concurrent consumers.

Dead agents stay in the table with their columns frozen; they are excluded
from stepping, collision and command application, never removed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .quat import quat_identity

__all__ = ["SimClock", "AgentBatch", "BatchSnapshot", "WorldSnapshot", "batch_create", "batch_snapshot"]


@dataclass
class SimClock:
    """Fixed-step simulation clock: ``t = tick * dt``."""

    dt: float
    tick: int = 0

    def __post_init__(self) -> None:
        if not (self.dt > 0.0 and np.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive and finite, got {self.dt}")

    @property
    def t(self) -> float:
        return self.tick * self.dt

    def advance(self) -> None:
        self.tick += 1


@dataclass
class AgentBatch:
    """Structure-of-arrays state for ``n`` agents of one type.

    Columns: ``pos``/``vel`` (n,3) m and m/s in the ENU inertial frame,
    ``quat`` (n,4) scalar-first unit quaternions, ``omega`` (n,3) rad/s in the
    FLU body frame, ``alive`` (n,) bool, ``agent_ids`` (n,) stable unique ids.
    """

    type_id: int
    agent_ids: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    quat: np.ndarray
    omega: np.ndarray
    alive: np.ndarray

    @property
    def n(self) -> int:
        return self.agent_ids.shape[0]

    def validate(self) -> None:
        n = self.n
        for name, col, shape in (
            ("pos", self.pos, (n, 3)),
            ("vel", self.vel, (n, 3)),
            ("quat", self.quat, (n, 4)),
            ("omega", self.omega, (n, 3)),
            ("alive", self.alive, (n,)),
            ("agent_ids", self.agent_ids, (n,)),
        ):
            if col.shape != shape:
                raise ValidationError(f"column {name} has shape {col.shape}, expected {shape}")
        if len(np.unique(self.agent_ids)) != n:
            raise ValidationError("agent ids must be unique")
        live = self.alive
        if n and live.any():
            if not np.all(np.isfinite(self.pos[live])) or not np.all(np.isfinite(self.vel[live])) \
                    or not np.all(np.isfinite(self.quat[live])) or not np.all(np.isfinite(self.omega[live])):
                raise ValidationError("alive rows must be finite")
            norms = np.linalg.norm(self.quat[live], axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-9:
                raise ValidationError("alive quaternion rows must be unit within 1e-9")

    def index_of(self, agent_id: int) -> int | None:
        """Linear lookup; hot paths should cache an id -> row map instead."""
        hits = np.nonzero(self.agent_ids == np.uint64(agent_id))[0]
        return int(hits[0]) if hits.size else None

    def rows(self):
        """Read-only per-agent views, for scalar cross-checks."""
        for i in range(self.n):
            yield {
                "agent_id": int(self.agent_ids[i]),
                "alive": bool(self.alive[i]),
                "pos": tuple(self.pos[i]),
                "vel": tuple(self.vel[i]),
                "quat": tuple(self.quat[i]),
                "omega": tuple(self.omega[i]),
            }


def _frozen(a: np.ndarray) -> np.ndarray:
    out = a.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class BatchSnapshot:
    """Deep immutable copy of one batch, tagged with the tick at capture."""

    tick: int
    type_id: int
    agent_ids: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    quat: np.ndarray
    omega: np.ndarray
    alive: np.ndarray

    @property
    def n(self) -> int:
        return self.agent_ids.shape[0]


@dataclass(frozen=True)
class WorldSnapshot:
    """Snapshots of every type at one tick, ordered by ascending type_id."""

    tick: int
    batches: tuple[BatchSnapshot, ...] = field(default_factory=tuple)

    def batch_for(self, type_id: int) -> BatchSnapshot | None:
        for b in self.batches:
            if b.type_id == type_id:
                return b
        return None


def batch_create(
    type_id: int,
    n: int,
    pos: np.ndarray,
    quat: np.ndarray | None = None,
    vel: np.ndarray | None = None,
    omega: np.ndarray | None = None,
    agent_ids: np.ndarray | None = None,
    id_base: int = 0,
) -> AgentBatch:
    """Build a batch with all agents alive.

    Velocities and body rates default to zero, attitude to identity, ids to
    ``id_base .. id_base + n - 1``.  Input quaternions must be unit within
    1e-6 (they are renormalized on storage); explicit ids must be unique.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    pos = np.array(pos, dtype=float).reshape(n, 3)
    quat = quat_identity(n) if quat is None else np.array(quat, dtype=float).reshape(n, 4)
    vel = np.zeros((n, 3)) if vel is None else np.array(vel, dtype=float).reshape(n, 3)
    omega = np.zeros((n, 3)) if omega is None else np.array(omega, dtype=float).reshape(n, 3)
    for name, col in (("pos", pos), ("quat", quat), ("vel", vel), ("omega", omega)):
        if not np.all(np.isfinite(col)):
            raise ValidationError(f"initial {name} must be finite")
    norms = np.linalg.norm(quat, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-6:
        raise ValidationError("initial quaternions must be unit within 1e-6")
    quat = quat / norms[:, None]

    if agent_ids is None:
        agent_ids = np.arange(id_base, id_base + n, dtype=np.uint64)
    else:
        agent_ids = np.array(agent_ids, dtype=np.uint64).reshape(n)
        if len(np.unique(agent_ids)) != n:
            raise ValidationError("requested agent ids contain duplicates")

    batch = AgentBatch(
        type_id=type_id,
        agent_ids=agent_ids,
        pos=pos,
        vel=vel,
        quat=quat,
        omega=omega,
        alive=np.ones(n, dtype=bool),
    )
    batch.validate()
    return batch


def batch_snapshot(batch: AgentBatch, tick: int) -> BatchSnapshot:
    """Deep, immutable snapshot safe for concurrent consumers."""
    return BatchSnapshot(
        tick=tick,
        type_id=batch.type_id,
        agent_ids=_frozen(batch.agent_ids),
        pos=_frozen(batch.pos),
        vel=_frozen(batch.vel),
        quat=_frozen(batch.quat),
        omega=_frozen(batch.omega),
        alive=_frozen(batch.alive),
    )
