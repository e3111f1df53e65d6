// Viewer app: WebSocket snapshot stream in, canvas rendering out, mouse
// steering back to the simulator.  Network reads and rendering are
// decoupled by a one-slot latest-snapshot mailbox so a slow frame never
// blocks the reader; overwritten snapshots are counted as drops.

import { Camera } from "./camera.js";
import { drawAgents, drawGrid, drawInfluenceRing } from "./render.js";
import {
  FrameParser,
  InfluenceMode,
  MSG_EVENT,
  MSG_SNAPSHOT,
  PROTOCOL_VERSION,
  Snapshot,
  decodeEvent,
  decodeSnapshot,
  encodeControl,
  encodeViewerInput,
} from "./protocol.js";

const INFLUENCE_SEND_HZ = 30;
const DEFAULT_RADIUS_M = 5;
const DEFAULT_STRENGTH = 3;

interface Mailbox {
  snapshot: Snapshot | null;
  drops: number;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function wsUrl(): string {
  const params = new URLSearchParams(location.search);
  return params.get("ws") ?? `ws://${location.hostname || "127.0.0.1"}:9003`;
}

function simDt(): number {
  return Number(new URLSearchParams(location.search).get("dt") ?? "0.002");
}

class ViewerApp {
  private canvas = el<HTMLCanvasElement>("view");
  private ctx = this.canvas.getContext("2d")!;
  private cam = new Camera(this.canvas.width, this.canvas.height);
  private mailbox: Mailbox = { snapshot: null, drops: 0 };
  private latest: Snapshot | null = null;
  private ws: WebSocket | null = null;
  private parser = new FrameParser();
  private reconnectDelay = 0.5;
  private lastSnapshotWall = 0;
  private fitted = false;

  private mode: InfluenceMode = "repel";
  private panMode = false;
  private pointerDown = false;
  private panning = false;
  private cursor: [number, number] | null = null;
  private lastSendWall = 0;
  private lastPan: [number, number] = [0, 0];

  private fpsCounter = { frames: 0, since: performance.now(), value: 0 };
  private deadNotice = "";

  start(): void {
    this.bindUi();
    this.connect();
    const loop = () => {
      this.render();
      requestAnimationFrame(loop);
    };
    requestAnimationFrame(loop);
    setInterval(() => this.maybeSendInfluence(), 1000 / INFLUENCE_SEND_HZ);
  }

  // -- networking --------------------------------------------------------

  private connect(): void {
    const url = wsUrl();
    this.setBanner(`connecting to ${url} ...`, "banner-warn");
    const ws = new WebSocket(url);
    ws.binaryType = "arraybuffer";
    this.parser = new FrameParser();
    ws.onopen = () => {
      this.reconnectDelay = 0.5;
      this.setBanner("", "");
      ws.send(encodeControl("hello", { version: PROTOCOL_VERSION, role: "viewer" }));
    };
    ws.onmessage = (ev) => {
      if (!(ev.data instanceof ArrayBuffer)) return;
      for (const frame of this.parser.feed(new Uint8Array(ev.data))) {
        if (frame.msgType === MSG_SNAPSHOT) {
          if (this.mailbox.snapshot !== null) this.mailbox.drops++;
          this.mailbox.snapshot = decodeSnapshot(frame.payload);
          this.lastSnapshotWall = performance.now();
        } else if (frame.msgType === MSG_EVENT) {
          const event = decodeEvent(frame.payload);
          if (event.kind.endsWith("death")) {
            this.deadNotice = `tick ${event.tick}: ${event.kind} of ${event.agentIds.join(", ")}`;
          }
        }
      }
    };
    ws.onclose = () => {
      this.setBanner(`disconnected - retrying in ${this.reconnectDelay.toFixed(1)} s`, "banner-error");
      setTimeout(() => this.connect(), this.reconnectDelay * 1000);
      this.reconnectDelay = Math.min(10, this.reconnectDelay * 2);
    };
    ws.onerror = () => ws.close();
    this.ws = ws;
  }

  // -- input -------------------------------------------------------------

  private bindUi(): void {
    for (const m of ["attract", "repel", "waypoint", "pan"] as const) {
      el<HTMLButtonElement>(`mode-${m}`).onclick = () => {
        this.panMode = m === "pan";
        if (m !== "pan") this.mode = m;
        for (const other of ["attract", "repel", "waypoint", "pan"]) {
          el(`mode-${other}`).classList.toggle("active", other === m);
        }
      };
    }
    el("mode-repel").classList.add("active");

    const canvas = this.canvas;
    canvas.addEventListener("pointerdown", (ev) => {
      canvas.setPointerCapture(ev.pointerId);
      this.pointerDown = true;
      this.panning = this.panMode || ev.button !== 0;
      this.lastPan = [ev.offsetX, ev.offsetY];
    });
    canvas.addEventListener("pointermove", (ev) => {
      this.cursor = [ev.offsetX, ev.offsetY];
      if (this.pointerDown && this.panning) {
        this.cam.panByPixels(ev.offsetX - this.lastPan[0], ev.offsetY - this.lastPan[1]);
        this.lastPan = [ev.offsetX, ev.offsetY];
      }
    });
    const release = () => {
      this.pointerDown = false;
      this.panning = false;
    };
    canvas.addEventListener("pointerup", release);
    canvas.addEventListener("pointercancel", release);
    canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.cam.zoomAt(ev.offsetX, ev.offsetY, ev.deltaY < 0 ? 1.15 : 1 / 1.15);
    }, { passive: false });
    canvas.addEventListener("contextmenu", (ev) => ev.preventDefault());

    window.addEventListener("resize", () => this.resize());
    this.resize();
  }

  private resize(): void {
    const rect = this.canvas.parentElement!.getBoundingClientRect();
    this.canvas.width = rect.width;
    this.canvas.height = rect.height - 4;
    this.cam.resize(this.canvas.width, this.canvas.height);
  }

  /** Fire-and-forget influence messages, rate-limited while the button is held. */
  private maybeSendInfluence(): void {
    if (!this.pointerDown || this.panning || !this.cursor) return;
    if (!this.ws || this.ws.readyState !== WebSocket.OPEN) return;
    const now = performance.now();
    if (now - this.lastSendWall < 1000 / INFLUENCE_SEND_HZ - 1) return;
    this.lastSendWall = now;
    const [wx, wy] = this.cam.screenToWorld(this.cursor[0], this.cursor[1]);
    const z = this.latest?.batches[0]?.n ? this.latest.batches[0].pos[2] : 0;
    this.ws.send(encodeViewerInput(this.mode, [wx, wy, z], DEFAULT_RADIUS_M, DEFAULT_STRENGTH));
  }

  // -- rendering ---------------------------------------------------------

  private render(): void {
    const incoming = this.mailbox.snapshot;
    if (incoming !== null) {
      this.mailbox.snapshot = null;
      this.latest = incoming;
      if (!this.fitted && incoming.batches.some((b) => b.n > 0)) {
        this.fitView(incoming);
        this.fitted = true;
      }
    }
    drawGrid(this.ctx, this.cam);
    let alive = 0;
    if (this.latest) alive = drawAgents(this.ctx, this.cam, this.latest);
    if (this.cursor && !this.panMode) {
      const [wx, wy] = this.cam.screenToWorld(this.cursor[0], this.cursor[1]);
      drawInfluenceRing(this.ctx, this.cam, wx, wy, DEFAULT_RADIUS_M, this.mode);
    }
    this.updateHud(alive);
  }

  private fitView(snap: Snapshot): void {
    let minX = Infinity, minY = Infinity, maxX = -Infinity, maxY = -Infinity;
    for (const b of snap.batches) {
      for (let i = 0; i < b.n; i++) {
        minX = Math.min(minX, b.pos[3 * i]);
        maxX = Math.max(maxX, b.pos[3 * i]);
        minY = Math.min(minY, b.pos[3 * i + 1]);
        maxY = Math.max(maxY, b.pos[3 * i + 1]);
      }
    }
    if (minX < maxX || minY < maxY) this.cam.fit(minX - 2, minY - 2, maxX + 2, maxY + 2);
  }

  private updateHud(alive: number): void {
    const fc = this.fpsCounter;
    fc.frames++;
    const now = performance.now();
    if (now - fc.since >= 1000) {
      fc.value = (fc.frames * 1000) / (now - fc.since);
      fc.frames = 0;
      fc.since = now;
    }
    const stale = this.latest !== null && now - this.lastSnapshotWall > 1000;
    el("hud-tick").textContent = this.latest ? String(this.latest.tick) : "-";
    el("hud-time").textContent = this.latest
      ? `${(this.latest.tick * simDt()).toFixed(2)} s` : "-";
    el("hud-alive").textContent = String(alive);
    el("hud-fps").textContent = fc.value.toFixed(0);
    el("hud-drops").textContent = String(this.mailbox.drops);
    el("hud-stale").style.display = stale ? "inline" : "none";
    el("hud-event").textContent = this.deadNotice;
  }

  private setBanner(text: string, cls: string): void {
    const banner = el("banner");
    banner.textContent = text;
    banner.className = cls;
    banner.style.display = text ? "block" : "none";
  }
}

new ViewerApp().start();
