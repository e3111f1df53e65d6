"""Command-line entrypoint: run, bench, and replay subcommands."""

from __future__ import annotations

import argparse
import logging
import sys
import threading
import time
from pathlib import Path

from . import __version__
from .errors import ConfigError, SwarmstepError

log = logging.getLogger("swarmstep")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swarmstep",
                                     description="batched swarm robotics simulator")
    parser.add_argument("--version", action="version", version=f"swarmstep {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a simulation from a config file")
    p_run.add_argument("--config", required=True, help="TOML (or JSON) config file")
    p_run.add_argument("--headless", action="store_true",
                       help="disable socket endpoints regardless of config")
    p_run.add_argument("--realtime", type=float, default=None, metavar="R",
                       help="override realtime factor (0 = as fast as possible)")
    p_run.add_argument("--ticks", type=int, default=None, help="override tick limit")
    p_run.add_argument("--record", default=None, metavar="FILE",
                       help="record every published snapshot frame to FILE")
    p_run.add_argument("--serve-ui", type=int, nargs="?", const=8080, default=None,
                       metavar="PORT", help="serve the browser viewer assets (default port 8080)")

    p_bench = sub.add_parser("bench", help="timing benchmark (warmup + timed rounds)")
    p_bench.add_argument("--counts", default=",".join(str(c) for c in (64, 256, 1024, 4096, 8192, 10000)),
                         help="comma-separated agent counts, ascending")
    p_bench.add_argument("--warmup", type=int, default=500)
    p_bench.add_argument("--timed", type=int, default=2000)
    p_bench.add_argument("--repeats", type=int, default=3)
    p_bench.add_argument("--dt", type=float, default=1e-3)
    p_bench.add_argument("--collision", action="store_true", help="include in-loop collision detection")
    p_bench.add_argument("--endpoints", action="store_true",
                         help="include snapshot publication and wire encoding in the round")
    p_bench.add_argument("--out", default=None, metavar="CSV", help="write per-repeat CSV here")

    p_replay = sub.add_parser("replay", help="inspect or re-serve a recorded snapshot stream")
    p_replay.add_argument("--record", required=True, metavar="FILE")
    p_replay.add_argument("--serve-viewer", type=int, default=None, metavar="PORT",
                          help="serve the recording to viewer clients on PORT")
    p_replay.add_argument("--rate", type=float, default=50.0, help="replay rate, snapshots/s")
    p_replay.add_argument("--quiet", action="store_true", help="suppress per-snapshot lines")
    return parser


def _cmd_run(args) -> int:
    from .config import load_config
    from .core import build_world, run
    from .server import Endpoints, SnapshotRecorder

    config = load_config(args.config)
    if args.realtime is not None or args.ticks is not None:
        from dataclasses import replace

        config = replace(config,
                         realtime_factor=args.realtime if args.realtime is not None else config.realtime_factor,
                         tick_limit=args.ticks if args.ticks is not None else config.tick_limit)
    world = build_world(config)
    stop = threading.Event()
    endpoints = None
    recorder = None
    ui_server = None
    try:
        if config.net.enabled and not args.headless:
            endpoints = Endpoints(world, config.net, stop)
            ws_note = f"ws://{config.net.host}:{endpoints.ws.port}" if endpoints.ws else "ws disabled"
            print(f"endpoints: algo tcp://{config.net.host}:{endpoints.algo.port} "
                  f"viewer tcp://{config.net.host}:{endpoints.viewer.port} {ws_note}",
                  flush=True)
        if args.record:
            recorder = SnapshotRecorder(args.record)
            world.snapshot_subscribers.append(recorder.publish)
        if args.serve_ui is not None:
            ui_server = _serve_ui(args.serve_ui)
        report = run(config, stop=stop, world=world, endpoints=endpoints)
        print(report.summary())
        return 0
    except KeyboardInterrupt:
        stop.set()
        return 0
    finally:
        if recorder is not None:
            recorder.close()
        if ui_server is not None:
            ui_server.shutdown()


def _serve_ui(port: int):
    import functools
    import http.server

    root = Path(__file__).resolve().parents[2] / "frontend"
    if not (root / "index.html").exists():
        raise ConfigError(f"viewer assets not found under {root}; build the frontend first")
    handler = functools.partial(http.server.SimpleHTTPRequestHandler, directory=str(root))
    httpd = http.server.ThreadingHTTPServer(("0.0.0.0", port), handler)
    threading.Thread(target=httpd.serve_forever, daemon=True, name="ui-server").start()
    print(f"viewer UI: http://127.0.0.1:{httpd.server_address[1]}/", flush=True)
    return httpd


def _cmd_bench(args) -> int:
    from .bench import BenchSpec, run_bench

    try:
        counts = tuple(int(c) for c in args.counts.split(",") if c.strip())
    except ValueError as exc:
        raise ConfigError(f"bad --counts: {exc}") from exc
    spec = BenchSpec(agent_counts=counts, warmup_rounds=args.warmup,
                     timed_rounds=args.timed, repeats=args.repeats,
                     dt=args.dt, collision=args.collision, endpoints=args.endpoints)
    result = run_bench(spec, progress=lambda row: print(
        f"  n={row.n_agents:<6} repeat {row.repeat}: {row.mean_ms:.4f} +- {row.sd_ms:.4f} ms",
        flush=True))
    print(result.table())
    if args.out:
        Path(args.out).write_text(result.to_csv())
        print(f"wrote {args.out}")
    else:
        print(result.to_csv(), end="")
    return 0


def _cmd_replay(args) -> int:
    from .wire import FrameDecoder, MSG_SNAPSHOT, decode_snapshot

    path = Path(args.record)
    if not path.exists():
        raise ConfigError(f"recording not found: {path}")
    decoder = FrameDecoder()
    frames = []
    with open(path, "rb") as fh:
        while chunk := fh.read(1 << 20):
            frames.extend(decoder.feed(chunk))
    snapshots = [(t, p) for t, p in frames if t == MSG_SNAPSHOT]
    print(f"{len(snapshots)} snapshots in {path}")

    endpoint = None
    if args.serve_viewer is not None:
        from .server import serve_endpoint

        endpoint = serve_endpoint("127.0.0.1", args.serve_viewer, "viewer", lambda *a: None)
        print(f"serving replay on tcp://127.0.0.1:{endpoint.port} at {args.rate}/s")
    try:
        from .wire import encode_frame

        for msg_type, payload in snapshots:
            snap = decode_snapshot(payload)
            alive = sum(int(b.alive.sum()) for b in snap.batches)
            total = sum(b.n for b in snap.batches)
            if not args.quiet:
                print(f"tick {snap.tick}: {alive}/{total} alive, {len(snap.batches)} type(s)")
            if endpoint is not None:
                endpoint.broadcast(encode_frame(msg_type, payload), is_snapshot=True)
                time.sleep(1.0 / max(args.rate, 1e-6))
    finally:
        if endpoint is not None:
            endpoint.close()
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "replay":
            return _cmd_replay(args)
        parser.error(f"unknown command {args.command}")
        return 2
    except (ConfigError, SwarmstepError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
