// Decoder parity: the browser-side codec must pass the same golden-byte
// fixtures as the primary implementation (tests/golden/), plus framing
// robustness under arbitrary segmentation.

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import {
  FrameParser,
  MSG_COMMAND,
  MSG_SNAPSHOT,
  MSG_VIEWER_INPUT,
  decodeSnapshot,
  encodeControl,
  encodeFrame,
  encodeViewerInput,
  quatYaw,
} from "../src/protocol.js";

const GOLDEN = join(dirname(fileURLToPath(import.meta.url)), "..", "..", "tests", "golden");

function readGolden(name: string): Uint8Array {
  return new Uint8Array(readFileSync(join(GOLDEN, name)));
}

describe("golden fixtures", () => {
  it("decodes the snapshot fixture to the documented values", () => {
    const frame = readGolden("snapshot_golden.bin");
    const parser = new FrameParser();
    const frames = parser.feed(frame);
    expect(frames).toHaveLength(1);
    expect(frames[0].msgType).toBe(MSG_SNAPSHOT);

    const snap = decodeSnapshot(frames[0].payload);
    expect(snap.tick).toBe(7);
    expect(snap.batches).toHaveLength(2);
    const b = snap.batches[0];
    expect(b.typeId).toBe(0);
    expect(b.n).toBe(1);
    expect(Number(b.agentIds[0])).toBe(42);
    expect(b.alive[0]).toBe(1);
    expect(Array.from(b.pos)).toEqual([1.5, -2.0, 3.25]);
    expect(Array.from(b.vel)).toEqual([0.5, 0.25, -1.0]);
    expect(Array.from(b.quat)).toEqual([1.0, 0.0, 0.0, 0.0]); // canonicalized on the wire
    expect(Array.from(b.omega)).toEqual([0.0625, -0.125, 0.25]);
    expect(snap.batches[1].typeId).toBe(1);
    expect(snap.batches[1].n).toBe(0);
  });

  it("parses the command fixture frame header", () => {
    const frame = readGolden("command_golden.bin");
    const frames = new FrameParser().feed(frame);
    expect(frames).toHaveLength(1);
    expect(frames[0].msgType).toBe(MSG_COMMAND);
    const body = JSON.parse(new TextDecoder().decode(frames[0].payload));
    expect(body.tick_hint).toBe(7);
    expect(body.commands[0]).toEqual({
      agent_id: 42, level: "pos", values: [1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.5],
    });
  });
});

describe("framing", () => {
  it("reconstructs frames under arbitrary segmentation", () => {
    const frames: Uint8Array[] = [];
    for (let i = 0; i < 50; i++) {
      const payload = new Uint8Array(i % 17);
      payload.fill(i);
      frames.push(encodeFrame(1 + (i % 250), payload));
    }
    const stream = new Uint8Array(frames.reduce((n, f) => n + f.length, 0));
    let off = 0;
    for (const f of frames) {
      stream.set(f, off);
      off += f.length;
    }
    const parser = new FrameParser();
    const out: { msgType: number; payload: Uint8Array }[] = [];
    let pos = 0;
    let step = 1;
    while (pos < stream.length) {
      out.push(...parser.feed(stream.slice(pos, pos + step)));
      pos += step;
      step = (step % 7) + 1;
    }
    expect(out).toHaveLength(frames.length);
    out.forEach((f, i) => {
      expect(Array.from(encodeFrame(f.msgType, f.payload))).toEqual(Array.from(frames[i]));
    });
    expect(parser.pending).toBe(0);
  });

  it("rejects an oversized length field", () => {
    const bad = new Uint8Array(5);
    new DataView(bad.buffer).setUint32(0, 65 * 1024 * 1024, true);
    expect(() => new FrameParser().feed(bad)).toThrow(/bad frame length/);
  });
});

describe("viewer input encoding", () => {
  it("emits the documented 21-byte payload", () => {
    const frame = encodeViewerInput("repel", [1.0, -2.0, 0.5], 5.0, 1.5);
    expect(frame.length).toBe(5 + 21);
    const dv = new DataView(frame.buffer);
    expect(dv.getUint32(0, true)).toBe(22);
    expect(frame[4]).toBe(MSG_VIEWER_INPUT);
    expect(frame[5]).toBe(1); // repel
    expect(dv.getFloat32(6, true)).toBeCloseTo(1.0, 6);
    expect(dv.getFloat32(10, true)).toBeCloseTo(-2.0, 6);
    expect(dv.getFloat32(14, true)).toBeCloseTo(0.5, 6);
    expect(dv.getFloat32(18, true)).toBeCloseTo(5.0, 6);
    expect(dv.getFloat32(22, true)).toBeCloseTo(1.5, 6);
  });

  it("control stop matches the documented bytes", () => {
    const frame = encodeControl("stop");
    expect(Array.from(frame.slice(0, 5))).toEqual([0x0e, 0, 0, 0, 0x05]);
    expect(new TextDecoder().decode(frame.slice(5))).toBe('{"op":"stop"}');
  });
});

describe("quaternion yaw", () => {
  it("matches the half-angle construction", () => {
    for (const theta of [-2.5, -1, 0, 0.5, 1.5, 3]) {
      const w = Math.cos(theta / 2);
      const z = Math.sin(theta / 2);
      expect(quatYaw(w, 0, 0, z)).toBeCloseTo(theta, 10);
    }
  });
});
