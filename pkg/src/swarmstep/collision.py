"""Asynchronous sphere-collision and neighbor detection over snapshots.

A uniform grid provides the broad phase: agents are hashed into cells of a
fixed size, candidate pairs are generated per cell-offset with vectorized
sorted-key joins, and the narrow phase compares exact squared distances.
Collision uses STRICT inequality (touching spheres do not collide); the same
strictness applies to the sensing radius.

The detector runs as an independent task connected only by queues.  When it
lags the snapshot stream it skips to the newest pending snapshot and reports
how many it dropped.
"""

from __future__ import annotations

import queue
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ValidationError
from .state import WorldSnapshot

__all__ = ["CollisionConfig", "CollisionReport", "hash_cell", "detect", "run_detector"]

_MAX_CELLS_PER_AXIS = 1 << 20


@dataclass(frozen=True)
class CollisionConfig:
    """Per-type collision radii, one sensing radius, and the grid cell size."""

    r_collide: Mapping[int, float]
    r_sense: float
    cell: float

    def __post_init__(self):
        if not self.r_collide:
            raise ValidationError("r_collide must name at least one agent type")
        rmax = max(self.r_collide.values())
        for tid, r in self.r_collide.items():
            if not 0.0 < r <= self.r_sense:
                raise ValidationError(f"type {tid}: need 0 < r_collide <= r_sense, got {r}")
        if self.cell < 2.0 * rmax:
            raise ValidationError(f"cell size {self.cell} must be >= 2 * max collision radius {2 * rmax}")


@dataclass(frozen=True)
class CollisionReport:
    """Tick-tagged collision pairs and neighbor sets over alive agents."""

    tick: int
    collisions: tuple[tuple[int, int], ...]
    neighbor_sets: dict[int, tuple[int, ...]] = field(default_factory=dict)
    dropped: int = 0


def hash_cell(pos: np.ndarray, cell: float) -> np.ndarray:
    """Component-wise floor(pos / cell) as int64 grid coordinates."""
    if not cell > 0.0:
        raise ValidationError(f"cell size must be positive, got {cell}")
    return np.floor(np.asarray(pos, dtype=float) / cell).astype(np.int64)


def _gather_alive(snapshot: WorldSnapshot, config: CollisionConfig):
    ids, pos, radii = [], [], []
    for b in snapshot.batches:
        if b.tick != snapshot.tick:
            raise ValidationError("snapshot sections disagree on tick")
        if b.type_id not in config.r_collide:
            raise ValidationError(f"no collision radius configured for type {b.type_id}")
        live = b.alive
        if live.any():
            ids.append(b.agent_ids[live].astype(np.int64))
            pos.append(b.pos[live])
            radii.append(np.full(int(live.sum()), config.r_collide[b.type_id]))
    if not ids:
        return (np.empty(0, dtype=np.int64), np.empty((0, 3)), np.empty(0))
    return np.concatenate(ids), np.concatenate(pos), np.concatenate(radii)


def _half_space_offsets(d_max: int, reach: float, cell: float) -> np.ndarray:
    """Cell offsets (0,0,0) < o lexicographically whose closest corners can
    still be within ``reach``."""
    rng = np.arange(-d_max, d_max + 1)
    grid = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    key = (grid[:, 0], grid[:, 1], grid[:, 2])
    lex_positive = (key[0] > 0) | ((key[0] == 0) & ((key[1] > 0) | ((key[1] == 0) & (key[2] > 0))))
    min_sep = np.maximum(np.abs(grid) - 1, 0) * cell
    reachable = np.sum(min_sep * min_sep, axis=1) < reach * reach
    return grid[lex_positive & reachable]


def _join_pairs(keys: np.ndarray, skeys: np.ndarray, sorder: np.ndarray, target: np.ndarray):
    """For each agent i, indices of all agents whose cell key equals target[i]."""
    left = np.searchsorted(skeys, target, side="left")
    right = np.searchsorted(skeys, target, side="right")
    cnt = right - left
    total = int(cnt.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    src = np.repeat(np.arange(keys.shape[0]), cnt)
    starts = np.cumsum(cnt) - cnt
    within = np.arange(total) - np.repeat(starts, cnt)
    dst = sorder[np.repeat(left, cnt) + within]
    return src, dst


def detect(snapshot: WorldSnapshot, config: CollisionConfig, dropped: int = 0) -> CollisionReport:
    """All colliding pairs (cross-type included) and per-agent neighbor sets.

    A pair collides when ``|p_a - p_b| < r_a + r_b`` (strict); neighbor sets
    hold ids strictly within ``r_sense``.  Only alive agents appear.
    """
    ids, pos, radii = _gather_alive(snapshot, config)
    n = ids.shape[0]
    neighbor_sets: dict[int, tuple[int, ...]] = {int(i): () for i in ids}
    if n < 2:
        return CollisionReport(tick=snapshot.tick, collisions=(), neighbor_sets=neighbor_sets,
                               dropped=dropped)

    r_sense = config.r_sense
    reach = max(r_sense, 2.0 * float(np.max(radii)))
    d_max = int(np.ceil(reach / config.cell))
    cells = hash_cell(pos, config.cell)
    cells -= cells.min(axis=0)
    extent = int(cells.max()) + 2 * d_max + 1
    if extent >= _MAX_CELLS_PER_AXIS:
        raise ValidationError("world extent exceeds the supported grid range")
    cells += d_max
    mult = np.int64(extent)
    keys = (cells[:, 0] * mult + cells[:, 1]) * mult + cells[:, 2]
    sorder = np.argsort(keys, kind="stable")
    skeys = keys[sorder]

    pair_src, pair_dst = [], []
    # same-cell pairs, each once
    src, dst = _join_pairs(keys, skeys, sorder, keys)
    same = src < dst
    pair_src.append(src[same])
    pair_dst.append(dst[same])
    # neighbor cells, half space so every unordered cell pair is visited once
    for off in _half_space_offsets(d_max, reach, config.cell):
        eo = (np.int64(off[0]) * mult + np.int64(off[1])) * mult + np.int64(off[2])
        src, dst = _join_pairs(keys, skeys, sorder, keys + eo)
        pair_src.append(src)
        pair_dst.append(dst)

    src = np.concatenate(pair_src)
    dst = np.concatenate(pair_dst)
    if src.size == 0:
        return CollisionReport(tick=snapshot.tick, collisions=(), neighbor_sets=neighbor_sets,
                               dropped=dropped)

    diff = pos[src] - pos[dst]
    d2 = np.sum(diff * diff, axis=1)

    rsum = radii[src] + radii[dst]
    hit = d2 < rsum * rsum
    ids_a = np.minimum(ids[src[hit]], ids[dst[hit]])
    ids_b = np.maximum(ids[src[hit]], ids[dst[hit]])
    order = np.lexsort((ids_b, ids_a))
    collisions = tuple(zip(ids_a[order].tolist(), ids_b[order].tolist()))

    near = d2 < r_sense * r_sense
    na = np.concatenate([src[near], dst[near]])
    nb = np.concatenate([dst[near], src[near]])
    if na.size:
        order = np.lexsort((ids[nb], ids[na]))
        na, nb = na[order], nb[order]
        bounds = np.nonzero(np.diff(na))[0] + 1
        for chunk_a, chunk_b in zip(np.split(na, bounds), np.split(nb, bounds)):
            neighbor_sets[int(ids[chunk_a[0]])] = tuple(ids[chunk_b].tolist())
    return CollisionReport(tick=snapshot.tick, collisions=collisions,
                           neighbor_sets=neighbor_sets, dropped=dropped)


def run_detector(in_q: "queue.Queue[WorldSnapshot | None]",
                 out_q: "queue.Queue[CollisionReport | None]",
                 config: CollisionConfig) -> None:
    """Consume snapshots, emit one report per consumed snapshot.

    Snapshots must arrive tick-ordered.  If the detector falls behind, it
    jumps to the newest pending snapshot; skipped snapshots are counted in
    the next report's ``dropped`` field.  A ``None`` sentinel shuts the task
    down cleanly (echoed downstream).
    """
    try:
        pending_drops = 0
        closing = False
        item = in_q.get()
        while item is not None:
            out_q.put(detect(item, config, dropped=pending_drops))
            pending_drops = 0
            if closing:
                break
            item = in_q.get()
            while item is not None:
                try:
                    nxt = in_q.get_nowait()
                except queue.Empty:
                    break
                if nxt is None:
                    closing = True
                    break
                item = nxt
                pending_drops += 1
    finally:
        out_q.put(None)
