// End-to-end steering check against a live simulator process: a repel
// influence sent at a cluster's centroid must disperse the cluster.  The
// test speaks the exact browser codec over the viewer TCP endpoint (the
// WebSocket binding carries these same frames one per message).

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { connect, Socket } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import {
  FrameParser,
  MSG_SNAPSHOT,
  Snapshot,
  decodeSnapshot,
  encodeControl,
  encodeViewerInput,
} from "../src/protocol.js";

const VIEWER_PORT = 19302;
const SIM_DT = 0.02;

const CONFIG = `
[sim]
dt = ${SIM_DT}
tick_limit = 0
realtime_factor = 1.0

[net]
enabled = true
host = "127.0.0.1"
algo_port = 19301
viewer_port = ${VIEWER_PORT}
ws_port = 19303

[[types]]
name = "cluster"
kind = "quadrotor"
count = 9
[types.layout]
kind = "grid"
spacing = 0.6
origin = [0.0, 0.0, 5.0]
`;

let sim: ChildProcess | null = null;
let simOut = "";

function startSim(): Promise<void> {
  const dir = mkdtempSync(join(tmpdir(), "swarmstep-steer-"));
  const cfgPath = join(dir, "steer.toml");
  writeFileSync(cfgPath, CONFIG);
  sim = spawn("python3", ["-u", "-m", "swarmstep.cli", "run", "--config", cfgPath], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error(`sim did not start:\n${simOut}`)), 30_000);
    sim!.stdout!.on("data", (chunk: Buffer) => {
      simOut += chunk.toString();
      if (simOut.includes("endpoints:")) {
        clearTimeout(timer);
        resolve();
      }
    });
    sim!.stderr!.on("data", (chunk: Buffer) => {
      simOut += chunk.toString();
    });
    sim!.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`sim exited early (${code}):\n${simOut}`));
    });
  });
}

function meanPairwiseDistance(snap: Snapshot): number {
  const pts: [number, number, number][] = [];
  for (const b of snap.batches) {
    for (let i = 0; i < b.n; i++) {
      if (b.alive[i]) pts.push([b.pos[3 * i], b.pos[3 * i + 1], b.pos[3 * i + 2]]);
    }
  }
  let sum = 0;
  let count = 0;
  for (let a = 0; a < pts.length; a++) {
    for (let b = a + 1; b < pts.length; b++) {
      sum += Math.hypot(pts[a][0] - pts[b][0], pts[a][1] - pts[b][1], pts[a][2] - pts[b][2]);
      count++;
    }
  }
  return count ? sum / count : 0;
}

function centroid(snap: Snapshot): [number, number, number] {
  let x = 0, y = 0, z = 0, n = 0;
  for (const b of snap.batches) {
    for (let i = 0; i < b.n; i++) {
      if (b.alive[i]) {
        x += b.pos[3 * i];
        y += b.pos[3 * i + 1];
        z += b.pos[3 * i + 2];
        n++;
      }
    }
  }
  return [x / n, y / n, z / n];
}

describe("interactive steering over the wire", () => {
  beforeAll(async () => {
    await startSim();
  }, 40_000);

  afterAll(() => {
    if (sim && sim.exitCode === null) sim.kill("SIGKILL");
  });

  it("repel at the cluster centroid spreads it by >= 20% within 3 sim seconds", async () => {
    const socket: Socket = await new Promise((resolve, reject) => {
      const s = connect(VIEWER_PORT, "127.0.0.1", () => resolve(s));
      s.on("error", reject);
    });
    const parser = new FrameParser();

    const result = await new Promise<{ initial: number; final: number }>((resolve, reject) => {
      let initial: number | null = null;
      let startTick: number | null = null;
      let center: [number, number, number] | null = null;
      let latest: Snapshot | null = null;
      const timer = setTimeout(
        () => reject(new Error(`timed out; sim output:\n${simOut}`)), 45_000);

      socket.on("data", (chunk: Buffer) => {
        for (const frame of parser.feed(new Uint8Array(chunk))) {
          if (frame.msgType !== MSG_SNAPSHOT) continue;
          const snap = decodeSnapshot(frame.payload);
          latest = snap;
          if (initial === null) {
            initial = meanPairwiseDistance(snap);
            startTick = snap.tick;
            center = centroid(snap);
          }
          // re-send the influence every snapshot: it decays after one tick
          socket.write(encodeViewerInput("repel", center!, 6.0, 3.0));
          if (snap.tick - startTick! >= 3.0 / SIM_DT) {
            clearTimeout(timer);
            resolve({ initial: initial!, final: meanPairwiseDistance(latest!) });
            return;
          }
        }
      });
      socket.on("error", (err) => {
        clearTimeout(timer);
        reject(err);
      });
    });

    socket.write(encodeControl("stop"));
    socket.end();

    expect(result.initial).toBeGreaterThan(0.5); // sanity: it starts as a tight cluster
    expect(result.final).toBeGreaterThanOrEqual(result.initial * 1.2);
  }, 60_000);
});
