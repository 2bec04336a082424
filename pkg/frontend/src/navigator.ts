/**
 * Headless navigator state: the model metadata, the control values, and
 * the mapping from both to /render request bodies. The DOM layer in
 * main.ts is a thin shell over this class so the contract is testable
 * against a mocked service.
 */

import { composePose, Mat4, PoseControls, ZERO_CONTROLS } from "./pose.js";
import {
  DebouncedRenderClient,
  RenderClientOptions,
  RenderRequestBody,
  RenderResult,
} from "./renderClient.js";

export interface ModelInfo {
  probe: {
    opening_angle_deg: number;
    n_rays: number;
    n_samples: number;
    [key: string]: unknown;
  };
  target_dims: [number, number];
  spacing_mm: number;
  poses: number[][];
  [key: string]: unknown;
}

export interface ViewSettings {
  openingAngleDeg: number;
  nRays: number;
  nSamples: number;
}

export interface Snapshot {
  pose: number[];
  body: RenderRequestBody;
  pngBytes: ArrayBuffer | null;
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

export class ProbeNavigator {
  readonly client: DebouncedRenderClient;

  private model: ModelInfo | null = null;
  private controls: PoseControls = { ...ZERO_CONTROLS };
  private view: ViewSettings = { openingAngleDeg: 360, nRays: 64, nSamples: 32 };
  private lastShown: RenderResult | null = null;

  constructor(baseUrl: string, clientOptions: RenderClientOptions = {}) {
    const userOnImage = clientOptions.onImage;
    this.client = new DebouncedRenderClient(baseUrl, {
      ...clientOptions,
      onImage: (result) => {
        this.lastShown = result;
        userOnImage?.(result);
      },
    });
  }

  /** Ingest GET /model; resets controls to the trajectory start. */
  setModel(model: ModelInfo): void {
    if (!model.poses || model.poses.length === 0) {
      throw new Error("model reports no trajectory poses");
    }
    this.model = model;
    this.controls = { ...ZERO_CONTROLS };
    this.view = {
      openingAngleDeg: model.probe.opening_angle_deg,
      nRays: model.probe.n_rays,
      nSamples: model.probe.n_samples,
    };
  }

  get basePose(): Mat4 {
    if (!this.model) throw new Error("model not loaded");
    return this.model.poses[0];
  }

  /** Trajectory polyline for the 3D context view. */
  get trajectory(): Array<[number, number, number]> {
    if (!this.model) throw new Error("model not loaded");
    return this.model.poses.map((p) => [p[3], p[7], p[11]]);
  }

  /** Unit direction of travel, first pose to last. */
  get trajectoryAxis(): [number, number, number] {
    const t = this.trajectory;
    const first = t[0];
    const last = t[t.length - 1];
    const d: [number, number, number] = [
      last[0] - first[0],
      last[1] - first[1],
      last[2] - first[2],
    ];
    const n = Math.hypot(d[0], d[1], d[2]);
    if (n < 1e-12) return [0, 0, 1];
    return [d[0] / n, d[1] / n, d[2] / n];
  }

  get currentControls(): PoseControls {
    return { ...this.controls };
  }

  get currentView(): ViewSettings {
    return { ...this.view };
  }

  /** The pose the next request will carry. */
  currentPose(): Mat4 {
    return composePose(this.basePose, this.trajectoryAxis, this.controls);
  }

  currentRequestBody(): RenderRequestBody {
    if (!this.model) throw new Error("model not loaded");
    return {
      pose: this.currentPose(),
      opening_angle_deg: this.view.openingAngleDeg,
      n_rays: this.view.nRays,
      n_samples: this.view.nSamples,
      width: this.model.target_dims[0],
      height: this.model.target_dims[1],
    };
  }

  private push(): void {
    this.client.request(this.currentRequestBody());
  }

  /** Drag the probe marker along the trajectory by a signed distance. */
  dragAlongTrajectory(deltaMm: number): void {
    this.controls = { ...this.controls, alongMm: this.controls.alongMm + deltaMm };
    this.push();
  }

  setControls(partial: Partial<PoseControls>): void {
    this.controls = { ...this.controls, ...partial };
    this.push();
  }

  setOpeningAngle(deg: number): void {
    this.view = { ...this.view, openingAngleDeg: clamp(deg, 5, 360) };
    this.push();
  }

  setRayCount(n: number): void {
    this.view = { ...this.view, nRays: Math.max(2, Math.round(n)) };
    this.push();
  }

  setSampleCount(n: number): void {
    this.view = { ...this.view, nSamples: Math.max(1, Math.round(n)) };
    this.push();
  }

  /** Issue the initial render at the trajectory's first pose. */
  renderInitial(): void {
    this.push();
  }

  /**
   * Current PNG plus the pose that produced it; the pose comes from the
   * shown image's own request body, never from newer control state.
   */
  snapshot(): Snapshot {
    if (this.lastShown) {
      return {
        pose: this.lastShown.body.pose,
        body: this.lastShown.body,
        pngBytes: this.lastShown.bytes,
      };
    }
    const body = this.currentRequestBody();
    return { pose: body.pose, body, pngBytes: null };
  }
}
