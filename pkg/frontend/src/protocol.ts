// Wire protocol codec, mirroring PROTOCOL.md byte for byte.
// Frames: u32 LE length (= 1 + payload) | u8 msg type | payload.
// All multi-byte values are little-endian; snapshot columns are contiguous.

export const MSG_SNAPSHOT = 0x01;
export const MSG_COMMAND = 0x02;
export const MSG_EVENT = 0x03;
export const MSG_VIEWER_INPUT = 0x04;
export const MSG_CONTROL = 0x05;

export const PROTOCOL_VERSION = 1;
const MAX_FRAME_LEN = 64 * 1024 * 1024;

export interface Frame {
  msgType: number;
  payload: Uint8Array;
}

/** Incremental frame parser tolerant of arbitrary chunk boundaries. */
export class FrameParser {
  private buf = new Uint8Array(0);

  feed(chunk: Uint8Array): Frame[] {
    if (this.buf.length === 0) {
      this.buf = chunk.slice();
    } else {
      const merged = new Uint8Array(this.buf.length + chunk.length);
      merged.set(this.buf);
      merged.set(chunk, this.buf.length);
      this.buf = merged;
    }
    const frames: Frame[] = [];
    let off = 0;
    while (this.buf.length - off >= 5) {
      const dv = new DataView(this.buf.buffer, this.buf.byteOffset + off);
      const length = dv.getUint32(0, true);
      if (length < 1 || length > MAX_FRAME_LEN) {
        throw new Error(`bad frame length ${length}`);
      }
      if (this.buf.length - off < 4 + length) break;
      frames.push({
        msgType: this.buf[off + 4],
        payload: this.buf.slice(off + 5, off + 4 + length),
      });
      off += 4 + length;
    }
    this.buf = off > 0 ? this.buf.slice(off) : this.buf;
    return frames;
  }

  get pending(): number {
    return this.buf.length;
  }
}

export function encodeFrame(msgType: number, payload: Uint8Array): Uint8Array {
  const out = new Uint8Array(5 + payload.length);
  new DataView(out.buffer).setUint32(0, 1 + payload.length, true);
  out[4] = msgType;
  out.set(payload, 5);
  return out;
}

export interface BatchSection {
  typeId: number;
  n: number;
  agentIds: BigUint64Array;
  alive: Uint8Array;
  pos: Float32Array; // x,y,z per agent
  vel: Float32Array;
  quat: Float32Array; // w,x,y,z per agent
  omega: Float32Array;
}

export interface Snapshot {
  tick: number;
  batches: BatchSection[];
}

export function decodeSnapshot(payload: Uint8Array): Snapshot {
  if (payload.length < 8) throw new Error("snapshot payload too short");
  const dv = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  const tick = Number(dv.getBigUint64(0, true));
  let off = 8;
  const batches: BatchSection[] = [];
  while (off < payload.length) {
    if (off + 6 > payload.length) throw new Error("truncated section header");
    const typeId = dv.getUint16(off, true);
    const n = dv.getUint32(off + 2, true);
    off += 6;
    const need = n * (8 + 1 + 4 * (3 + 3 + 4 + 3));
    if (off + need > payload.length) throw new Error("truncated section body");
    // slice() copies into fresh, aligned buffers
    const col = (bytes: number) => {
      const view = payload.slice(off, off + bytes);
      off += bytes;
      return view;
    };
    batches.push({
      typeId,
      n,
      agentIds: new BigUint64Array(col(8 * n).buffer),
      alive: col(n),
      pos: new Float32Array(col(12 * n).buffer),
      vel: new Float32Array(col(12 * n).buffer),
      quat: new Float32Array(col(16 * n).buffer),
      omega: new Float32Array(col(12 * n).buffer),
    });
  }
  return { tick, batches };
}

export type InfluenceMode = "attract" | "repel" | "waypoint";
const MODE_CODES: Record<InfluenceMode, number> = { attract: 0, repel: 1, waypoint: 2 };

export function encodeViewerInput(
  mode: InfluenceMode,
  worldPoint: [number, number, number],
  radius: number,
  strength: number,
): Uint8Array {
  const payload = new Uint8Array(21);
  const dv = new DataView(payload.buffer);
  payload[0] = MODE_CODES[mode];
  dv.setFloat32(1, worldPoint[0], true);
  dv.setFloat32(5, worldPoint[1], true);
  dv.setFloat32(9, worldPoint[2], true);
  dv.setFloat32(13, radius, true);
  dv.setFloat32(17, strength, true);
  return encodeFrame(MSG_VIEWER_INPUT, payload);
}

export function encodeControl(op: string, params: Record<string, unknown> = {}): Uint8Array {
  const body = JSON.stringify({ op, ...params });
  return encodeFrame(MSG_CONTROL, new TextEncoder().encode(body));
}

export interface SimEvent {
  tick: number;
  kind: string;
  agentIds: number[];
}

export function decodeEvent(payload: Uint8Array): SimEvent {
  const obj = JSON.parse(new TextDecoder().decode(payload));
  return { tick: obj.tick, kind: obj.kind, agentIds: obj.agent_ids };
}

/** Heading (yaw) from a scalar-first quaternion. */
export function quatYaw(w: number, x: number, y: number, z: number): number {
  return Math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z));
}
