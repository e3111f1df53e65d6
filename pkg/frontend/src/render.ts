// Canvas renderer: oriented glyphs for alive agents, faded markers for dead
// ones, altitude-coded color, meter grid, and the influence ring.

import { Camera } from "./camera.js";
import { Snapshot, quatYaw } from "./protocol.js";

const TYPE_HUES = [210, 30, 135, 285]; // per agent type, cycled

function altitudeLightness(z: number): number {
  // 0 m -> 35 %, 20 m -> 70 %
  const t = Math.min(1, Math.max(0, z / 20));
  return 35 + 35 * t;
}

export function drawGrid(ctx: CanvasRenderingContext2D, cam: Camera): void {
  const { viewWidth: w, viewHeight: h } = cam;
  ctx.fillStyle = "#10141a";
  ctx.fillRect(0, 0, w, h);
  // pick a grid pitch that lands between 40 and 400 px
  let pitch = 1;
  while (pitch * cam.scale < 40) pitch *= 5;
  while (pitch * cam.scale > 400) pitch /= 5;
  const [minX, maxY] = cam.screenToWorld(0, 0);
  const [maxX, minY] = cam.screenToWorld(w, h);
  ctx.strokeStyle = "#1f2630";
  ctx.lineWidth = 1;
  ctx.beginPath();
  for (let x = Math.floor(minX / pitch) * pitch; x <= maxX; x += pitch) {
    const [px] = cam.worldToScreen(x, 0);
    ctx.moveTo(px, 0);
    ctx.lineTo(px, h);
  }
  for (let y = Math.floor(minY / pitch) * pitch; y <= maxY; y += pitch) {
    const [, py] = cam.worldToScreen(0, y);
    ctx.moveTo(0, py);
    ctx.lineTo(w, py);
  }
  ctx.stroke();
  // axes
  ctx.strokeStyle = "#2e3a48";
  ctx.beginPath();
  const [ox, oy] = cam.worldToScreen(0, 0);
  ctx.moveTo(ox, 0);
  ctx.lineTo(ox, h);
  ctx.moveTo(0, oy);
  ctx.lineTo(w, oy);
  ctx.stroke();
}

export function drawAgents(ctx: CanvasRenderingContext2D, cam: Camera, snap: Snapshot): number {
  let alive = 0;
  const size = Math.min(14, Math.max(3, cam.scale * 0.25));
  for (const b of snap.batches) {
    const hue = TYPE_HUES[b.typeId % TYPE_HUES.length];
    for (let i = 0; i < b.n; i++) {
      const [px, py] = cam.worldToScreen(b.pos[3 * i], b.pos[3 * i + 1]);
      if (px < -20 || py < -20 || px > cam.viewWidth + 20 || py > cam.viewHeight + 20) {
        if (b.alive[i]) alive++;
        continue;
      }
      if (!b.alive[i]) {
        ctx.fillStyle = "rgba(120,120,120,0.35)";
        ctx.fillRect(px - 2, py - 2, 4, 4);
        continue;
      }
      alive++;
      const yaw = quatYaw(b.quat[4 * i], b.quat[4 * i + 1], b.quat[4 * i + 2], b.quat[4 * i + 3]);
      const light = altitudeLightness(b.pos[3 * i + 2]);
      ctx.fillStyle = `hsl(${hue} 75% ${light}%)`;
      ctx.save();
      ctx.translate(px, py);
      ctx.rotate(-yaw); // screen y is flipped
      ctx.beginPath();
      ctx.moveTo(size, 0);
      ctx.lineTo(-0.5 * size, 0.45 * size);
      ctx.lineTo(-0.5 * size, -0.45 * size);
      ctx.closePath();
      ctx.fill();
      ctx.restore();
    }
  }
  return alive;
}

export function drawInfluenceRing(
  ctx: CanvasRenderingContext2D,
  cam: Camera,
  worldX: number,
  worldY: number,
  radius: number,
  mode: string,
): void {
  const [px, py] = cam.worldToScreen(worldX, worldY);
  ctx.strokeStyle = mode === "repel" ? "rgba(255,90,90,0.8)"
    : mode === "attract" ? "rgba(90,200,255,0.8)" : "rgba(255,220,90,0.8)";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  ctx.arc(px, py, radius * cam.scale, 0, 2 * Math.PI);
  ctx.stroke();
  ctx.beginPath();
  ctx.arc(px, py, 3, 0, 2 * Math.PI);
  ctx.stroke();
}
