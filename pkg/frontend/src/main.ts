/**
 * DOM shell wiring the headless ProbeNavigator to the page. All logic
 * with a testable contract lives in navigator.ts / renderClient.ts /
 * pose.ts; this file only binds controls, canvases, and error surfaces.
 */

import { ProbeNavigator } from "./navigator.js";
import type { ModelInfo } from "./navigator.js";

const DEFAULT_BASE_URL = "http://127.0.0.1:8765";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showBanner(message: string | null): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = message ?? "";
  banner.style.display = message ? "block" : "none";
}

function showToast(message: string): void {
  const toast = el<HTMLDivElement>("toast");
  toast.textContent = message;
  toast.style.display = "block";
  setTimeout(() => {
    toast.style.display = "none";
  }, 4000);
}

async function drawPng(canvas: HTMLCanvasElement, bytes: ArrayBuffer, zoom: number): Promise<void> {
  const blob = new Blob([bytes], { type: "image/png" });
  const bitmap = await createImageBitmap(blob);
  canvas.width = bitmap.width * zoom;
  canvas.height = bitmap.height * zoom;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.imageSmoothingEnabled = false; // nearest-neighbor zoom only
  ctx.drawImage(bitmap, 0, 0, canvas.width, canvas.height);
}

function drawTrajectory(
  canvas: HTMLCanvasElement,
  points: Array<[number, number, number]>,
  alongMm: number,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx || points.length === 0) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const zs = points.map((p) => p[2]);
  const zMin = Math.min(...zs);
  const zMax = Math.max(...zs);
  const span = Math.max(zMax - zMin, 1);
  const xAt = (z: number) => 10 + ((z - zMin) / span) * (canvas.width - 20);
  const y = canvas.height / 2;
  ctx.strokeStyle = "#8ab";
  ctx.beginPath();
  ctx.moveTo(xAt(zs[0]), y);
  for (const z of zs) ctx.lineTo(xAt(z), y);
  ctx.stroke();
  ctx.fillStyle = "#e66";
  ctx.beginPath();
  ctx.arc(xAt(zMin + alongMm), y, 5, 0, 2 * Math.PI);
  ctx.fill();
}

async function boot(): Promise<void> {
  const baseUrl =
    new URLSearchParams(window.location.search).get("service") ?? DEFAULT_BASE_URL;

  const bmode = el<HTMLCanvasElement>("bmode");
  const context = el<HTMLCanvasElement>("context");
  const zoom = 2;

  const navigator = new ProbeNavigator(baseUrl, {
    onImage: (result) => {
      void drawPng(bmode, result.bytes, zoom);
      el<HTMLSpanElement>("meta").textContent =
        `angle ${result.body.opening_angle_deg}°, ` +
        `${result.body.n_rays} rays × ${result.body.n_samples} samples`;
    },
    onError: (message) => showToast(message),
  });

  const retry = async () => {
    try {
      const health = await fetch(`${baseUrl}/health`);
      if (!health.ok) throw new Error(`health returned ${health.status}`);
      const model = (await (await fetch(`${baseUrl}/model`)).json()) as ModelInfo;
      navigator.setModel(model);
      showBanner(null);
      navigator.renderInitial();
      drawTrajectory(context, navigator.trajectory, 0);
    } catch {
      showBanner(`service unreachable at ${baseUrl} — retrying…`);
      setTimeout(retry, 2000);
    }
  };
  await retry();

  const bindSlider = (id: string, apply: (value: number) => void) => {
    el<HTMLInputElement>(id).addEventListener("input", (event) => {
      apply(Number((event.target as HTMLInputElement).value));
      drawTrajectory(context, navigator.trajectory, navigator.currentControls.alongMm);
    });
  };

  bindSlider("along", (v) =>
    navigator.setControls({ alongMm: v }));
  bindSlider("offset-x", (v) => navigator.setControls({ offsetXMm: v }));
  bindSlider("offset-y", (v) => navigator.setControls({ offsetYMm: v }));
  bindSlider("offset-z", (v) => navigator.setControls({ offsetZMm: v }));
  bindSlider("yaw", (v) => navigator.setControls({ yawZDeg: v }));
  bindSlider("pitch", (v) => navigator.setControls({ pitchYDeg: v }));
  bindSlider("roll", (v) => navigator.setControls({ rollXDeg: v }));
  bindSlider("opening-angle", (v) => navigator.setOpeningAngle(v));
  bindSlider("rays", (v) => navigator.setRayCount(v));
  bindSlider("samples", (v) => navigator.setSampleCount(v));

  el<HTMLButtonElement>("snapshot").addEventListener("click", () => {
    const snap = navigator.snapshot();
    if (snap.pngBytes) {
      const a = document.createElement("a");
      a.href = URL.createObjectURL(new Blob([snap.pngBytes], { type: "image/png" }));
      a.download = "bmode.png";
      a.click();
    }
    const poseBlob = new Blob([JSON.stringify({ pose: snap.pose }, null, 1)], {
      type: "application/json",
    });
    const b = document.createElement("a");
    b.href = URL.createObjectURL(poseBlob);
    b.download = "pose.json";
    b.click();
  });
}

void boot();
