"""Benchmark harness: warmup rounds, timed rounds, mean +- SD per agent count.

A round is one full loop tick (inner-loop controller + RK4 for every agent).
Endpoints and collision detection are disabled unless explicitly enabled, so
the timing isolates the compute path; repeats are reported separately and
never silently averaged away.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import CollisionSettings, SimConfig, TypeSpec
from .core import World, build_world
from .errors import ValidationError
from .wire import AgentCommand, CommandLevel

__all__ = ["BenchSpec", "BenchRow", "BenchResult", "run_bench", "DEFAULT_COUNTS"]

DEFAULT_COUNTS = (64, 256, 1024, 4096, 8192, 10000)


@dataclass(frozen=True)
class BenchSpec:
    agent_counts: tuple[int, ...] = DEFAULT_COUNTS
    warmup_rounds: int = 500
    timed_rounds: int = 2000
    repeats: int = 3
    dt: float = 1e-3
    collision: bool = False
    endpoints: bool = False

    def __post_init__(self):
        if not self.agent_counts:
            raise ValidationError("agent_counts must not be empty")
        if any(c <= 0 for c in self.agent_counts):
            raise ValidationError("agent counts must be positive")
        if list(self.agent_counts) != sorted(self.agent_counts):
            raise ValidationError("agent counts must be sorted ascending")
        if self.warmup_rounds <= 0 or self.timed_rounds <= 0 or self.repeats <= 0:
            raise ValidationError("warmup_rounds, timed_rounds and repeats must be positive")


@dataclass(frozen=True)
class BenchRow:
    n_agents: int
    repeat: int
    mean_ms: float
    sd_ms: float


@dataclass
class BenchResult:
    spec: BenchSpec
    rows: list[BenchRow] = field(default_factory=list)
    skipped: list[tuple[int, str]] = field(default_factory=list)

    def aggregate(self) -> dict[int, tuple[float, float]]:
        """Per count: mean of repeat means, SD across all timed rounds pooled."""
        out = {}
        for n in self.spec.agent_counts:
            rows = [r for r in self.rows if r.n_agents == n]
            if rows:
                out[n] = (float(np.mean([r.mean_ms for r in rows])),
                          float(np.mean([r.sd_ms for r in rows])))
        return out

    def to_csv(self) -> str:
        lines = ["n_agents,repeat,mean_ms,sd_ms"]
        for r in self.rows:
            lines.append(f"{r.n_agents},{r.repeat},{r.mean_ms:.6f},{r.sd_ms:.6f}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        lines = [f"{'agents':>8}  {'running time per round [ms] (mean +- SD)':<44}"]
        for n, (mean, sd) in self.aggregate().items():
            per_repeat = ", ".join(f"{r.mean_ms:.4f}" for r in self.rows if r.n_agents == n)
            lines.append(f"{n:>8}  {mean:.4f} +- {sd:.4f}   (repeats: {per_repeat})")
        for n, reason in self.skipped:
            lines.append(f"{n:>8}  skipped: {reason}")
        return "\n".join(lines)


def _bench_world(n: int, dt: float, collision: bool) -> World:
    spacing = 3.0
    cfg = SimConfig(
        dt=dt,
        types=(TypeSpec(name="bench", kind="quadrotor", count=n,
                        layout={"kind": "grid", "spacing": spacing, "origin": [0.0, 0.0, 10.0]}),),
        collision=CollisionSettings(enabled=collision, in_loop=collision,
                                    r_sense=2.0, cell=1.0),
    )
    world = build_world(cfg)
    # paper-shaped hot path: the PID body-rate inner loop drives every agent
    hover = world.groups[0].params.hover_thrust
    world.submit_commands([AgentCommand(int(a), CommandLevel.RATE, (0.0, 0.0, 0.0, hover))
                           for a in world.groups[0].batch.agent_ids])
    world.tick()
    return world


def _attach_endpoints(world: World):
    """Optional wire-I/O load: ephemeral endpoints so snapshots get published
    and encoded even with no clients attached."""
    import threading

    from .config import NetConfig
    from .server import Endpoints

    return Endpoints(world, NetConfig(enabled=True, algo_port=0, viewer_port=0, ws_port=0),
                     threading.Event())


def run_bench(spec: BenchSpec, progress=None) -> BenchResult:
    """Run the warmup-then-timed methodology for each count and repeat.

    Wall time is measured per round with a monotonic clock.  A count that
    cannot be allocated is reported and skipped rather than failing the
    whole run.
    """
    result = BenchResult(spec=spec)
    for n in spec.agent_counts:
        try:
            for repeat in range(spec.repeats):
                world = _bench_world(n, spec.dt, spec.collision)
                endpoints = _attach_endpoints(world) if spec.endpoints else None
                for _ in range(spec.warmup_rounds):
                    world.tick()
                samples = np.empty(spec.timed_rounds)
                for i in range(spec.timed_rounds):
                    t0 = time.perf_counter()
                    world.tick()
                    samples[i] = time.perf_counter() - t0
                world.close()
                if endpoints is not None:
                    endpoints.close()
                samples *= 1e3
                row = BenchRow(n_agents=n, repeat=repeat,
                               mean_ms=float(samples.mean()),
                               sd_ms=float(samples.std(ddof=1)))
                result.rows.append(row)
                if progress is not None:
                    progress(row)
        except MemoryError:
            result.skipped.append((n, "insufficient memory"))
    return result
