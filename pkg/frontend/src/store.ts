/** UI state as a pure projection of GET /state plus the event stream.
 *
 * A page reload reconstructs the identical view: refresh() seeds the
 * snapshot, then the event stream replays the server's retained buffer
 * from sequence 0. A reported gap triggers another refresh, so the
 * snapshot fields never drift from the server even when events were
 * dropped.
 */

import type { ApiClient } from "./api.js";
import type {
  PhaseName,
  ProgressInfo,
  ServerEvent,
  StateSnapshot,
} from "./types.js";

export interface LogEntry {
  seq: number;
  kind: string;
  message: string;
  simTime: number | null;
}

export interface AutofocusEntry {
  seq: number;
  ok: boolean;
  x: number;
  y: number;
  z: number | null;
}

export interface FrameRef {
  roi: number;
  timestep: number;
  channel: string;
  version: number;
}

type Listener = () => void;

const LOG_LIMIT = 200;

export class UiStore {
  snapshot: StateSnapshot | null = null;
  /** Server phases in the order they were observed. */
  phaseHistory: PhaseName[] = [];
  /** PlaneFallback / Warning / Error entries, oldest first. */
  warnings: LogEntry[] = [];
  autofocus: AutofocusEntry[] = [];
  /** Latest stitched frame per "roi/channel". */
  latestFrames = new Map<string, FrameRef>();
  /** Tiles captured in the current timestep, per ROI, as "row,col". */
  captureMap = new Map<number, Set<string>>();
  connection: "connected" | "retrying" = "connected";

  private captureTimestep = -1;
  private listeners = new Set<Listener>();

  constructor(private readonly api: ApiClient) {}

  subscribe(fn: Listener): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  get phase(): PhaseName {
    return this.snapshot?.phase ?? "Idle";
  }

  get progress(): ProgressInfo {
    return (
      this.snapshot?.progress ?? {
        timestep: 0,
        n_timesteps: 0,
        tiles_done: 0,
        total: 0,
      }
    );
  }

  async refresh(): Promise<StateSnapshot> {
    const snap = await this.api.state();
    // A response that predates an event we already applied is stale;
    // keeping it would roll the view backwards.
    if (!this.snapshot || snap.last_seq >= this.snapshot.last_seq) {
      this.snapshot = snap;
      this.notify();
    }
    return snap;
  }

  setConnection(status: "connected" | "retrying"): void {
    if (this.connection !== status) {
      this.connection = status;
      this.notify();
    }
  }

  onGap = (): void => {
    void this.refresh().catch(() => {
      /* the stream keeps retrying; the next gap or poll refreshes again */
    });
  };

  private recordPhase(phase: PhaseName): void {
    if (this.phaseHistory[this.phaseHistory.length - 1] !== phase) {
      this.phaseHistory.push(phase);
    }
  }

  private pushLog(list: LogEntry[], entry: LogEntry): void {
    list.push(entry);
    if (list.length > LOG_LIMIT) list.splice(0, list.length - LOG_LIMIT);
  }

  applyEvent(event: ServerEvent): void {
    const p = event.payload;
    const snap = this.snapshot;
    if (snap && event.seq > snap.last_seq) snap.last_seq = event.seq;
    switch (event.kind) {
      case "PhaseChanged": {
        const phase = p.phase as PhaseName;
        if (snap) snap.phase = phase;
        this.recordPhase(phase);
        // Phase transitions create server-side state that events do not
        // carry (overview_image metadata, recomputed totals), so pull a
        // fresh snapshot.
        void this.refresh().catch(() => {});
        break;
      }
      case "ParamsChanged":
        if (snap && p.params) {
          snap.params = p.params as StateSnapshot["params"];
        }
        break;
      case "RoisChanged":
        if (snap && Array.isArray(p.rois)) {
          snap.rois = p.rois as number[][];
        }
        break;
      case "OverviewStored":
        if (snap) {
          snap.overview = {
            upper_left: p.upper_left as [number, number],
            lower_right: p.lower_right as [number, number],
            retained: Boolean(p.retained),
          };
        }
        break;
      case "StageMoved":
        if (snap) {
          if (typeof p.x === "number") snap.stage.x = p.x;
          if (typeof p.y === "number") snap.stage.y = p.y;
          if (typeof p.z === "number") snap.stage.z = p.z;
        }
        break;
      case "TileCaptured": {
        const roi = Number(p.roi ?? -1);
        const timestep = Number(p.timestep ?? 0);
        if (timestep !== this.captureTimestep) {
          this.captureTimestep = timestep;
          this.captureMap.clear();
        }
        let tiles = this.captureMap.get(roi);
        if (!tiles) {
          tiles = new Set();
          this.captureMap.set(roi, tiles);
        }
        tiles.add(`${p.row},${p.col}`);
        if (snap) snap.progress.tiles_done += 1;
        break;
      }
      case "TimestepDone":
        if (snap) snap.progress.timestep = Number(p.timestep) + 1;
        break;
      case "PanoramaReady": {
        const roi = Number(p.roi ?? -1);
        const channel = String(p.channel ?? "");
        this.latestFrames.set(`${roi}/${channel}`, {
          roi,
          timestep: Number(p.timestep ?? 0),
          channel,
          version: event.seq,
        });
        break;
      }
      case "AutofocusResult":
        this.autofocus.push({
          seq: event.seq,
          ok: Boolean(p.ok),
          x: Number(p.x),
          y: Number(p.y),
          z: typeof p.z === "number" ? p.z : null,
        });
        if (this.autofocus.length > LOG_LIMIT) {
          this.autofocus.splice(0, this.autofocus.length - LOG_LIMIT);
        }
        break;
      case "PlaneFallback":
        this.pushLog(this.warnings, {
          seq: event.seq,
          kind: event.kind,
          message: `timestep ${p.timestep}: only ${p.n_ok} focus points; reusing previous plane`,
          simTime: event.sim_time,
        });
        break;
      case "Warning":
      case "Error":
        this.pushLog(this.warnings, {
          seq: event.seq,
          kind: event.kind,
          message: String(p.message ?? ""),
          simTime: event.sim_time,
        });
        if (event.kind === "Error" && snap) {
          snap.last_error = String(p.message ?? "");
        }
        break;
      case "FlatteningChanged":
        if (snap && typeof p.apply === "boolean") {
          snap.flattening.apply = p.apply;
        }
        break;
      default:
        break;
    }
    this.notify();
  }
}
