/** Wire types for the control-service HTTP/JSON API. */

export type PhaseName =
  | "Idle"
  | "OverviewSetup"
  | "OverviewAcquiring"
  | "RoiSelection"
  | "FocusSetup"
  | "Running"
  | "Paused"
  | "Done"
  | "Error";

export const SETUP_PHASES: readonly PhaseName[] = [
  "Idle",
  "OverviewSetup",
  "RoiSelection",
  "FocusSetup",
];

export interface AcquisitionParams {
  duration_h: number;
  interval_min: number;
  z_step_um: number;
  z_min_um: number;
  z_max_um: number;
  channels: Record<string, number>;
  bit_depth: number;
  stitch_mode: string;
  overlap: number;
  apply_flattening: boolean;
  execute_stabilization: boolean;
  af_update_every: number;
  travel_mode: string;
  stage_speed: number;
  objective: string;
}

/** Pixel-to-stage mapping for the acquired overview panorama. */
export interface OverviewMeta {
  width: number;
  height: number;
  pixel_size_um: number;
  origin_um: [number, number];
}

export interface OverviewRegion {
  upper_left: [number, number];
  lower_right: [number, number];
  retained: boolean;
}

export interface ProgressInfo {
  timestep: number;
  n_timesteps: number;
  tiles_done: number;
  total: number;
}

export interface StageInfo {
  x: number;
  y: number;
  z: number;
  objective: string;
  channel: string;
}

export interface StateSnapshot {
  phase: PhaseName;
  last_seq: number;
  params: AcquisitionParams;
  overview: OverviewRegion | null;
  overview_image: OverviewMeta | null;
  rois: number[][];
  progress: ProgressInfo;
  stage: StageInfo;
  sim_time: number;
  flattening: { apply: boolean; channels: string[] };
  last_error: string | null;
}

export interface ServerEvent {
  seq: number;
  kind: string;
  payload: Record<string, unknown>;
  sim_time: number | null;
}

export interface EventsPage {
  events: ServerEvent[];
  gap: boolean;
  last_seq: number;
}

export const CHANNELS = ["BF", "PC", "FL"] as const;
export const STITCH_MODES = ["NoOverlap", "GridBF", "GridPC"] as const;
export const TRAVEL_MODES = ["UserDefined", "TravelingSalesman"] as const;
