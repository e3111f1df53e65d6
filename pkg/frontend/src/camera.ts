// Top-down camera over the ENU XY plane: world x east (screen right),
// world y north (screen up, so the screen y axis is flipped).

export class Camera {
  centerX = 0;
  centerY = 0;
  scale = 40; // pixels per meter

  constructor(
    public viewWidth: number,
    public viewHeight: number,
  ) {}

  resize(width: number, height: number): void {
    this.viewWidth = width;
    this.viewHeight = height;
  }

  worldToScreen(wx: number, wy: number): [number, number] {
    return [
      this.viewWidth / 2 + (wx - this.centerX) * this.scale,
      this.viewHeight / 2 - (wy - this.centerY) * this.scale,
    ];
  }

  screenToWorld(px: number, py: number): [number, number] {
    return [
      this.centerX + (px - this.viewWidth / 2) / this.scale,
      this.centerY - (py - this.viewHeight / 2) / this.scale,
    ];
  }

  panByPixels(dpx: number, dpy: number): void {
    this.centerX -= dpx / this.scale;
    this.centerY += dpy / this.scale;
  }

  /** Zoom keeping the world point under the cursor fixed. */
  zoomAt(px: number, py: number, factor: number): void {
    const [wx, wy] = this.screenToWorld(px, py);
    this.scale = Math.min(2000, Math.max(0.5, this.scale * factor));
    const [nx, ny] = this.screenToWorld(px, py);
    this.centerX += wx - nx;
    this.centerY += wy - ny;
  }

  fit(minX: number, minY: number, maxX: number, maxY: number, marginPx = 40): void {
    const spanX = Math.max(maxX - minX, 1e-6);
    const spanY = Math.max(maxY - minY, 1e-6);
    this.centerX = (minX + maxX) / 2;
    this.centerY = (minY + maxY) / 2;
    this.scale = Math.min(
      (this.viewWidth - 2 * marginPx) / spanX,
      (this.viewHeight - 2 * marginPx) / spanY,
    );
    this.scale = Math.min(2000, Math.max(0.5, this.scale));
  }
}
