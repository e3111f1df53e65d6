import { describe, expect, it } from "vitest";

import { Camera } from "../src/camera.js";

describe("camera transforms", () => {
  it("screen->world->screen round-trips within 0.5 px", () => {
    const cam = new Camera(1280, 720);
    cam.centerX = 3.7;
    cam.centerY = -11.2;
    cam.scale = 57.3;
    for (let i = 0; i < 500; i++) {
      const px = (i * 977) % 1280;
      const py = (i * 389) % 720;
      const [wx, wy] = cam.screenToWorld(px, py);
      const [bx, by] = cam.worldToScreen(wx, wy);
      expect(Math.hypot(bx - px, by - py)).toBeLessThan(0.5);
    }
  });

  it("north is up: +y world maps to smaller screen y", () => {
    const cam = new Camera(800, 600);
    const [, py0] = cam.worldToScreen(0, 0);
    const [, py1] = cam.worldToScreen(0, 5);
    expect(py1).toBeLessThan(py0);
  });

  it("zoomAt keeps the cursor's world point fixed", () => {
    const cam = new Camera(800, 600);
    cam.centerX = 2;
    cam.centerY = 1;
    const [wx, wy] = cam.screenToWorld(200, 150);
    cam.zoomAt(200, 150, 1.7);
    const [wx2, wy2] = cam.screenToWorld(200, 150);
    expect(wx2).toBeCloseTo(wx, 9);
    expect(wy2).toBeCloseTo(wy, 9);
  });

  it("pan moves the view by the pixel delta", () => {
    const cam = new Camera(800, 600);
    cam.scale = 50;
    const [wxBefore] = cam.screenToWorld(400, 300);
    cam.panByPixels(-100, 0); // drag left: view moves right
    const [wxAfter] = cam.screenToWorld(400, 300);
    expect(wxAfter - wxBefore).toBeCloseTo(2.0, 9);
  });

  it("fit frames the given bounds", () => {
    const cam = new Camera(1000, 500);
    cam.fit(-10, -5, 10, 5);
    const [px0, py0] = cam.worldToScreen(-10, -5);
    const [px1, py1] = cam.worldToScreen(10, 5);
    expect(px0).toBeGreaterThanOrEqual(0);
    expect(px1).toBeLessThanOrEqual(1000);
    expect(py1).toBeGreaterThanOrEqual(0);
    expect(py0).toBeLessThanOrEqual(500);
  });
});
