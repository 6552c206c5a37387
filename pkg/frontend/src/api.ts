/** Typed client for the control-service endpoints. Every UI action goes
 * through here so server 409/422 responses surface as ApiError and are
 * never swallowed. */

import type { EventsPage, StateSnapshot } from "./types.js";

export class ApiError extends Error {
  /** HTTP status (0 for network failures). */
  readonly status: number;
  /** Server phase when the request was rejected with 409. */
  readonly phase: string | null;
  /** Per-field validation messages from a 422 {errors: {...}} body. */
  readonly fieldErrors: Record<string, string>;

  constructor(
    status: number,
    message: string,
    phase: string | null = null,
    fieldErrors: Record<string, string> = {},
  ) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.phase = phase;
    this.fieldErrors = fieldErrors;
  }
}

async function toApiError(res: Response): Promise<ApiError> {
  let body: Record<string, unknown> = {};
  try {
    body = (await res.json()) as Record<string, unknown>;
  } catch {
    /* non-JSON error body; keep the status line */
  }
  const fieldErrors =
    body.errors && typeof body.errors === "object"
      ? (body.errors as Record<string, string>)
      : {};
  const message =
    typeof body.error === "string"
      ? body.error
      : Object.keys(fieldErrors).length
        ? Object.entries(fieldErrors)
            .map(([k, v]) => `${k}: ${v}`)
            .join("; ")
        : `HTTP ${res.status}`;
  const phase = typeof body.phase === "string" ? body.phase : null;
  return new ApiError(res.status, message, phase, fieldErrors);
}

export class ApiClient {
  constructor(
    readonly base: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    let res: Response;
    try {
      res = await this.fetchFn(`${this.base}${path}`, {
        method,
        headers: body === undefined ? {} : { "content-type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(0, `network error: ${String(err)}`);
    }
    if (!res.ok) throw await toApiError(res);
    return (await res.json()) as T;
  }

  state(): Promise<StateSnapshot> {
    return this.request("GET", "/state");
  }

  events(since: number, waitS: number, signal?: AbortSignal): Promise<EventsPage> {
    return this.fetchFn(`${this.base}/events?since=${since}&wait=${waitS}`, {
      signal,
    }).then(async (res) => {
      if (!res.ok) throw await toApiError(res);
      return (await res.json()) as EventsPage;
    });
  }

  putParams(params: Record<string, unknown>): Promise<{ ok: boolean }> {
    return this.request("PUT", "/params", params);
  }

  moveStage(dx: number, dy: number): Promise<{ x: number; y: number }> {
    return this.request("POST", "/stage/move", { dx, dy });
  }

  moveZ(dz: number): Promise<{ z: number }> {
    return this.request("POST", "/z/move", { dz });
  }

  registerCorner(which: "UL" | "LR"): Promise<{ which: string; x: number; y: number }> {
    return this.request("POST", "/overview/corner", { which });
  }

  storeOverview(): Promise<{ upper_left: number[]; lower_right: number[] }> {
    return this.request("POST", "/overview/store");
  }

  useRetainedOverview(): Promise<{ upper_left: number[]; lower_right: number[] }> {
    return this.request("POST", "/overview/use-retained");
  }

  acquireOverview(): Promise<{ ok: boolean }> {
    return this.request("POST", "/overview/acquire");
  }

  overviewImageUrl(version = 0): string {
    return `${this.base}/overview/image?format=png&v=${version}`;
  }

  postRois(rects: number[][]): Promise<{ rois: number[][] }> {
    return this.request("POST", "/rois", rects);
  }

  registerFocus(which: "min" | "max"): Promise<{ which: string; z: number }> {
    return this.request("POST", "/focus/register", { which });
  }

  setContrast(
    roi: number,
    channel: string,
    lo: number,
    hi: number,
  ): Promise<{ ok: boolean }> {
    return this.request("POST", "/contrast", { roi, channel, lo, hi });
  }

  createFlattening(): Promise<{ created: string[] }> {
    return this.request("POST", "/flattening/create");
  }

  toggleFlattening(): Promise<{ apply: boolean }> {
    return this.request("POST", "/flattening/apply-toggle");
  }

  startAcquisition(): Promise<{ ok: boolean }> {
    return this.request("POST", "/acquisition/start");
  }

  pauseAcquisition(): Promise<{ ok: boolean }> {
    return this.request("POST", "/acquisition/pause");
  }

  resumeAcquisition(): Promise<{ ok: boolean }> {
    return this.request("POST", "/acquisition/resume");
  }

  stopAcquisition(): Promise<{ ok: boolean }> {
    return this.request("POST", "/acquisition/stop");
  }

  frameUrl(roi: number, t: number, channel: string, version = 0): string {
    return `${this.base}/frames/${roi}/${t}/${channel}?format=png&v=${version}`;
  }
}
