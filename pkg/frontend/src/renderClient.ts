/**
 * Debounced, superseding render client.
 *
 * Control changes arrive faster than the service can render, so requests
 * are debounced (150 ms by default) and at most one /render request is in
 * flight at a time. A newer request aborts the pending one, and responses
 * from superseded requests are dropped so a stale image can never
 * overwrite a newer one. The image callback receives the exact request
 * body that produced the bytes, so displayed metadata always matches the
 * shown image.
 */

export interface RenderRequestBody {
  pose: number[];
  opening_angle_deg?: number;
  n_rays?: number;
  n_samples?: number;
  width?: number;
  height?: number;
}

export interface RenderResult {
  bytes: ArrayBuffer;
  body: RenderRequestBody;
}

export type FetchLike = (
  url: string,
  init: { method: string; headers: Record<string, string>; body: string; signal?: AbortSignal },
) => Promise<{
  ok: boolean;
  status: number;
  arrayBuffer(): Promise<ArrayBuffer>;
  json(): Promise<unknown>;
}>;

export interface RenderClientOptions {
  fetchImpl?: FetchLike;
  debounceMs?: number;
  onImage?: (result: RenderResult) => void;
  onError?: (message: string, body: RenderRequestBody) => void;
}

export class DebouncedRenderClient {
  readonly baseUrl: string;
  readonly debounceMs: number;

  private readonly fetchImpl: FetchLike;
  private readonly onImage: (result: RenderResult) => void;
  private readonly onError: (message: string, body: RenderRequestBody) => void;

  private timer: ReturnType<typeof setTimeout> | null = null;
  private pendingBody: RenderRequestBody | null = null;
  private inflight: AbortController | null = null;
  private generation = 0;

  /** Request bodies actually sent over the wire, in order. */
  readonly sentBodies: RenderRequestBody[] = [];

  constructor(baseUrl: string, options: RenderClientOptions = {}) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.debounceMs = options.debounceMs ?? 150;
    this.fetchImpl =
      options.fetchImpl ?? ((url, init) => fetch(url, init) as ReturnType<FetchLike>);
    this.onImage = options.onImage ?? (() => undefined);
    this.onError = options.onError ?? (() => undefined);
  }

  /** Schedule a render; collapses bursts into the latest body. */
  request(body: RenderRequestBody): void {
    this.pendingBody = body;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      const toSend = this.pendingBody;
      this.pendingBody = null;
      if (toSend) void this.send(toSend);
    }, this.debounceMs);
  }

  /** True while a request is scheduled or on the wire. */
  get busy(): boolean {
    return this.timer !== null || this.inflight !== null;
  }

  private async send(body: RenderRequestBody): Promise<void> {
    const generation = ++this.generation;
    if (this.inflight) this.inflight.abort();
    const controller = new AbortController();
    this.inflight = controller;
    this.sentBodies.push(body);
    try {
      const response = await this.fetchImpl(`${this.baseUrl}/render`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
        signal: controller.signal,
      });
      if (generation !== this.generation) return; // superseded mid-flight
      if (!response.ok) {
        let message = `render failed with status ${response.status}`;
        try {
          const doc = (await response.json()) as { error?: string };
          if (doc && typeof doc.error === "string") message = doc.error;
        } catch {
          /* keep the status message */
        }
        this.onError(message, body);
        return;
      }
      const bytes = await response.arrayBuffer();
      if (generation !== this.generation) return;
      this.onImage({ bytes, body });
    } catch (err) {
      if (controller.signal.aborted || generation !== this.generation) return;
      this.onError(err instanceof Error ? err.message : String(err), body);
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }
}
