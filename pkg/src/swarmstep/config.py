"""Run configuration: file schema, validation, and initial layout generation.

Config files are TOML (JSON also accepted, same schema).  See
configs/demo_circle.toml for a complete example.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .quad import QuadParams
from .wire import DEFAULT_ALGO_PORT, DEFAULT_VIEWER_PORT, DEFAULT_WS_PORT

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["SimConfig", "TypeSpec", "NetConfig", "CollisionSettings", "AlgoSettings",
           "load_config", "layout_poses"]


@dataclass(frozen=True)
class TypeSpec:
    name: str
    kind: str                      # "quadrotor" | "unicycle"
    count: int
    layout: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    r_collide: float = 0.15

    def __post_init__(self):
        if self.kind not in ("quadrotor", "unicycle"):
            raise ConfigError(f"unknown agent kind {self.kind!r}")
        if self.count < 0:
            raise ConfigError(f"type {self.name}: count must be >= 0")

    def quad_params(self) -> QuadParams:
        try:
            return QuadParams(**self.params) if self.params else QuadParams()
        except TypeError as exc:
            raise ConfigError(f"type {self.name}: bad quadrotor params: {exc}") from exc


@dataclass(frozen=True)
class NetConfig:
    enabled: bool = False
    algo_port: int = DEFAULT_ALGO_PORT
    viewer_port: int = DEFAULT_VIEWER_PORT
    ws_port: int = DEFAULT_WS_PORT
    host: str = "127.0.0.1"


@dataclass(frozen=True)
class CollisionSettings:
    enabled: bool = False
    in_loop: bool = False
    r_sense: float = 2.0
    cell: float = 1.0


@dataclass(frozen=True)
class AlgoSettings:
    in_loop: bool = False
    strategy: str = ""
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.002
    tick_limit: int = 0            # 0 = run until stopped
    realtime_factor: float = 0.0   # 0 = as fast as possible
    seed: int = 0
    types: tuple[TypeSpec, ...] = ()
    net: NetConfig = field(default_factory=NetConfig)
    collision: CollisionSettings = field(default_factory=CollisionSettings)
    algo: AlgoSettings = field(default_factory=AlgoSettings)

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.tick_limit < 0 or self.realtime_factor < 0.0:
            raise ConfigError("tick_limit and realtime_factor must be non-negative")
        names = [t.name for t in self.types]
        if len(set(names)) != len(names):
            raise ConfigError("type names must be unique")


def _parse(data: dict, path: str) -> SimConfig:
    try:
        sim = data.get("sim", {})
        types = tuple(
            TypeSpec(
                name=t.get("name", f"type{i}"),
                kind=t.get("kind", "quadrotor"),
                count=int(t.get("count", 0)),
                layout=t.get("layout", {}),
                params=t.get("params", {}),
                r_collide=float(t.get("r_collide", 0.15)),
            )
            for i, t in enumerate(data.get("types", []))
        )
        net = NetConfig(**data.get("net", {}))
        collision = CollisionSettings(**data.get("collision", {}))
        algo_raw = dict(data.get("algo", {}))
        algo = AlgoSettings(in_loop=bool(algo_raw.get("in_loop", False)),
                            strategy=str(algo_raw.get("strategy", "")),
                            params=algo_raw.get("params", {}))
        return SimConfig(
            dt=float(sim.get("dt", 0.002)),
            tick_limit=int(sim.get("tick_limit", 0)),
            realtime_factor=float(sim.get("realtime_factor", 0.0)),
            seed=int(sim.get("seed", 0)),
            types=types,
            net=net,
            collision=collision,
            algo=algo,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path: str | Path) -> SimConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config not found: {path}")
    raw = path.read_bytes()
    try:
        if path.suffix == ".json":
            data = json.loads(raw.decode())
        else:
            data = tomllib.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return _parse(data, str(path))


def layout_poses(layout: dict, count: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Initial positions and headings for ``count`` agents.

    Layout kinds: ``grid`` (spacing, origin), ``circle`` (radius, z, center;
    evenly phased, heading tangent), ``random_box`` (low, high, seeded).
    """
    kind = layout.get("kind", "grid")
    if kind == "grid":
        spacing = float(layout.get("spacing", 2.0))
        origin = np.asarray(layout.get("origin", (0.0, 0.0, 5.0)), dtype=float)
        cols = max(1, int(np.ceil(np.sqrt(max(count, 1)))))
        idx = np.arange(count)
        pos = np.stack([(idx % cols) * spacing, (idx // cols) * spacing, np.zeros(count)], axis=1)
        pos += origin
        yaw = np.zeros(count)
    elif kind == "circle":
        radius = float(layout.get("radius", 5.0))
        z = float(layout.get("z", 5.0))
        center = np.asarray(layout.get("center", (0.0, 0.0)), dtype=float)
        phases = 2.0 * np.pi * np.arange(count) / max(count, 1)
        pos = np.stack([center[0] + radius * np.cos(phases),
                        center[1] + radius * np.sin(phases),
                        np.full(count, z)], axis=1)
        yaw = phases + np.pi / 2
    elif kind == "random_box":
        low = np.asarray(layout.get("low", (0.0, 0.0, 2.0)), dtype=float)
        high = np.asarray(layout.get("high", (10.0, 10.0, 8.0)), dtype=float)
        rng = np.random.default_rng(seed)
        pos = rng.uniform(low, high, (count, 3))
        yaw = rng.uniform(-np.pi, np.pi, count)
    else:
        raise ConfigError(f"unknown layout kind {kind!r}")
    return pos, yaw
