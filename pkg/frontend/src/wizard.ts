/** Setup wizard mirroring the server phase machine.
 *
 * Each panel issues plain endpoint calls; the server owns every
 * transition, and its 409/422 responses are rendered inline at the
 * offending step rather than being swallowed. The panel for a phase is
 * rebuilt only when the phase changes, so form fields keep user input
 * across event-driven refreshes.
 */

import { ApiError, type ApiClient } from "./api.js";
import { clear, el } from "./dom.js";
import { RoiCanvas } from "./roi-canvas.js";
import type { UiStore } from "./store.js";
import {
  CHANNELS,
  STITCH_MODES,
  TRAVEL_MODES,
  type PhaseName,
  type StateSnapshot,
} from "./types.js";

export class Wizard {
  readonly root: HTMLElement;
  roiCanvas: RoiCanvas | null = null;

  private renderedPhase: PhaseName | null = null;
  private errorBox: HTMLElement | null = null;
  private dynamicFields = new Map<string, HTMLElement>();

  constructor(
    root: HTMLElement,
    private readonly api: ApiClient,
    private readonly store: UiStore,
  ) {
    this.root = root;
    store.subscribe(() => this.render());
    this.render();
  }

  render(): void {
    const phase = this.store.phase;
    if (phase !== this.renderedPhase) {
      this.renderedPhase = phase;
      this.rebuild(phase);
    }
    this.updateReadouts();
  }

  private rebuild(phase: PhaseName): void {
    clear(this.root);
    this.dynamicFields.clear();
    this.roiCanvas = null;
    this.root.append(this.stepIndicator(phase));
    this.errorBox = el("div", { id: "wizard-error", class: "error-box" });
    const panel = el("section", { class: "panel" });
    switch (phase) {
      case "Idle":
        panel.append(this.paramsPanel());
        break;
      case "OverviewSetup":
        panel.append(this.overviewPanel());
        break;
      case "OverviewAcquiring":
        panel.append(
          el("p", { class: "busy", text: "Acquiring overview panorama…" }),
        );
        break;
      case "RoiSelection":
        panel.append(this.roiPanel());
        break;
      case "FocusSetup":
        panel.append(this.focusPanel());
        break;
      default:
        panel.append(
          el("p", {
            text: "Acquisition in progress — use the monitor panel to steer it.",
          }),
        );
        break;
    }
    this.root.append(panel, this.errorBox);
  }

  private stepIndicator(phase: PhaseName): HTMLElement {
    const steps: [PhaseName[], string][] = [
      [["Idle"], "1. Parameters"],
      [["OverviewSetup", "OverviewAcquiring"], "2. Overview"],
      [["RoiSelection"], "3. Regions"],
      [["FocusSetup"], "4. Focus & start"],
      [["Running", "Paused", "Done", "Error"], "5. Acquire"],
    ];
    const bar = el("nav", { class: "steps" });
    for (const [phases, label] of steps) {
      bar.append(
        el("span", {
          class: phases.includes(phase) ? "step current" : "step",
          text: label,
        }),
      );
    }
    return bar;
  }

  private showError(err: unknown): void {
    if (!this.errorBox) return;
    clear(this.errorBox);
    const message = err instanceof Error ? err.message : String(err);
    this.errorBox.append(el("p", { text: message }));
    if (err instanceof ApiError) {
      for (const input of this.root.querySelectorAll(".invalid")) {
        input.classList.remove("invalid");
      }
      for (const field of Object.keys(err.fieldErrors)) {
        const input = this.root.querySelector(`#param-${field.replace(".", "-")}`);
        input?.classList.add("invalid");
      }
    }
  }

  private clearError(): void {
    if (this.errorBox) clear(this.errorBox);
    for (const input of this.root.querySelectorAll(".invalid")) {
      input.classList.remove("invalid");
    }
  }

  private async run(action: () => Promise<unknown>): Promise<void> {
    try {
      await action();
      this.clearError();
    } catch (err) {
      this.showError(err);
    }
  }

  private button(id: string, label: string, onClick: () => void): HTMLButtonElement {
    const b = el("button", { id, type: "button", text: label });
    b.addEventListener("click", onClick);
    return b;
  }

  private numberInput(id: string, value: number, step = "any"): HTMLInputElement {
    return el("input", {
      id,
      type: "number",
      step,
      value: String(value),
    });
  }

  private labeled(label: string, input: HTMLElement): HTMLElement {
    return el("label", { class: "field" }, el("span", { text: label }), input);
  }

  private select(id: string, options: readonly string[], value: string): HTMLSelectElement {
    const sel = el("select", { id });
    for (const opt of options) {
      const o = el("option", { value: opt, text: opt });
      if (opt === value) o.selected = true;
      sel.append(o);
    }
    return sel;
  }

  // ------------------------------------------------------------ step 1
  private paramsPanel(): HTMLElement {
    const p = this.store.snapshot?.params;
    const box = el("div", { class: "params-form" });
    box.append(
      el("h2", { text: "Acquisition parameters" }),
      this.labeled("Duration (h)", this.numberInput("param-duration_h", p?.duration_h ?? 12)),
      this.labeled(
        "Interval (min)",
        this.numberInput("param-interval_min", p?.interval_min ?? 15),
      ),
      this.labeled(
        "Objective",
        this.select("param-objective", ["2.5X", "10X", "20X", "60X"], p?.objective ?? "10X"),
      ),
      this.labeled(
        "Stitch mode",
        this.select("param-stitch_mode", STITCH_MODES, p?.stitch_mode ?? "GridPC"),
      ),
      this.labeled("Tile overlap (0–0.5)", this.numberInput("param-overlap", p?.overlap ?? 0.2)),
      this.labeled("Z-stack step (µm)", this.numberInput("param-z_step_um", p?.z_step_um ?? 0)),
      this.labeled(
        "Bit depth",
        this.select("param-bit_depth", ["8", "16"], String(p?.bit_depth ?? 8)),
      ),
      this.labeled(
        "Travel mode",
        this.select("param-travel_mode", TRAVEL_MODES, p?.travel_mode ?? "TravelingSalesman"),
      ),
      this.labeled(
        "Stage speed (µm/s)",
        this.numberInput("param-stage_speed", p?.stage_speed ?? 1000),
      ),
      this.labeled(
        "Autofocus every N steps",
        this.numberInput("param-af_update_every", p?.af_update_every ?? 1, "1"),
      ),
    );
    const channels = el("fieldset", { class: "channels" }, el("legend", { text: "Channels" }));
    for (const ch of CHANNELS) {
      const enabled = p ? ch in p.channels : ch === "PC";
      const check = el("input", { id: `chan-${ch}`, type: "checkbox" });
      check.checked = enabled;
      const exposure = this.numberInput(`exp-${ch}`, p?.channels[ch] ?? 33);
      channels.append(
        el(
          "div",
          { class: "channel-row" },
          check,
          el("label", { for: `chan-${ch}`, text: ch }),
          this.labeled("exposure (ms)", exposure),
        ),
      );
    }
    const applyFlat = el("input", { id: "param-apply_flattening", type: "checkbox" });
    applyFlat.checked = p?.apply_flattening ?? false;
    const stabilize = el("input", { id: "param-execute_stabilization", type: "checkbox" });
    stabilize.checked = p?.execute_stabilization ?? false;
    box.append(
      channels,
      el(
        "div",
        { class: "channel-row" },
        applyFlat,
        el("label", { for: "param-apply_flattening", text: "Apply flattening" }),
        stabilize,
        el("label", { for: "param-execute_stabilization", text: "Stabilize after run" }),
      ),
      this.button("apply-params", "Apply parameters", () =>
        void this.run(() => this.api.putParams(this.collectParams())),
      ),
    );
    return box;
  }

  private collectParams(): Record<string, unknown> {
    const num = (id: string) =>
      Number((this.root.querySelector(`#${id}`) as HTMLInputElement).value);
    const str = (id: string) =>
      (this.root.querySelector(`#${id}`) as HTMLSelectElement).value;
    const checked = (id: string) =>
      (this.root.querySelector(`#${id}`) as HTMLInputElement).checked;
    const channels: Record<string, number> = {};
    for (const ch of CHANNELS) {
      if (checked(`chan-${ch}`)) channels[ch] = num(`exp-${ch}`);
    }
    return {
      duration_h: num("param-duration_h"),
      interval_min: num("param-interval_min"),
      objective: str("param-objective"),
      stitch_mode: str("param-stitch_mode"),
      overlap: num("param-overlap"),
      z_step_um: num("param-z_step_um"),
      bit_depth: Math.round(num("param-bit_depth")),
      travel_mode: str("param-travel_mode"),
      stage_speed: num("param-stage_speed"),
      af_update_every: Math.round(num("param-af_update_every")),
      apply_flattening: checked("param-apply_flattening"),
      execute_stabilization: checked("param-execute_stabilization"),
      channels,
    };
  }

  // ------------------------------------------------------------ step 2
  private overviewPanel(): HTMLElement {
    const box = el("div", {});
    const stagePos = el("span", { id: "stage-pos", class: "readout" });
    const ulPos = el("span", { id: "corner-ul-pos", class: "readout", text: "–" });
    const lrPos = el("span", { id: "corner-lr-pos", class: "readout", text: "–" });
    this.dynamicFields.set("stage-pos", stagePos);
    this.dynamicFields.set("corner-ul-pos", ulPos);
    this.dynamicFields.set("corner-lr-pos", lrPos);

    const step = this.numberInput("jog-step", 500);
    const jog = (dx: number, dy: number) =>
      void this.run(() => this.api.moveStage(dx * Number(step.value), dy * Number(step.value)));
    box.append(
      el("h2", { text: "Overview region" }),
      el("p", {
        text: "Jog the stage to each corner of the region to scan, register both corners, then store and acquire the overview.",
      }),
      el(
        "div",
        { class: "jog-pad" },
        this.button("jog-up", "↑", () => jog(0, -1)),
        this.button("jog-down", "↓", () => jog(0, 1)),
        this.button("jog-left", "←", () => jog(-1, 0)),
        this.button("jog-right", "→", () => jog(1, 0)),
        this.labeled("step (µm)", step),
      ),
      el("p", {}, "Stage: ", stagePos),
      el(
        "div",
        { class: "corner-row" },
        this.button("corner-ul", "Ovw Upper Left", () =>
          void this.run(async () => {
            const r = await this.api.registerCorner("UL");
            ulPos.textContent = `(${r.x.toFixed(1)}, ${r.y.toFixed(1)})`;
          }),
        ),
        ulPos,
      ),
      el(
        "div",
        { class: "corner-row" },
        this.button("corner-lr", "Ovw Lower Right", () =>
          void this.run(async () => {
            const r = await this.api.registerCorner("LR");
            lrPos.textContent = `(${r.x.toFixed(1)}, ${r.y.toFixed(1)})`;
          }),
        ),
        lrPos,
      ),
      el(
        "div",
        { class: "corner-row" },
        this.button("store-ovw", "Store Ovw", () =>
          void this.run(() => this.api.storeOverview()),
        ),
        this.button("use-retained", "Use Retained", () =>
          void this.run(() => this.api.useRetainedOverview()),
        ),
        this.button("acquire-ovw", "Acquire Overview", () =>
          void this.run(() => this.api.acquireOverview()),
        ),
      ),
    );
    return box;
  }

  // ------------------------------------------------------------ step 3
  private roiPanel(): HTMLElement {
    const box = el("div", {});
    const hint = el("p", { id: "roi-hint", class: "hint" });
    const canvas = el("canvas", { id: "roi-canvas" });
    this.dynamicFields.set("roi-hint", hint);
    this.roiCanvas = new RoiCanvas(canvas, () => this.updateReadouts());

    this.ensureOverviewLoaded();
    box.append(
      el("h2", { text: "Draw regions of interest" }),
      el("p", {
        text: "Drag rectangles over the overview. Draw order sets the acquisition order.",
      }),
      canvas,
      hint,
      el(
        "div",
        { class: "corner-row" },
        this.button("roi-undo", "Undo last", () => this.roiCanvas?.undo()),
        this.button("roi-clear", "Clear", () => this.roiCanvas?.clear()),
        this.button("roi-submit", "Crop All Selected Regions", () =>
          void this.run(() => {
            const rois = this.roiCanvas?.roisUm() ?? [];
            if (!rois.length) {
              throw new ApiError(0, "draw at least one rectangle first");
            }
            return this.api.postRois(rois);
          }),
        ),
      ),
    );
    return box;
  }

  // ------------------------------------------------------------ step 4
  private focusPanel(): HTMLElement {
    const box = el("div", {});
    const zPos = el("span", { id: "z-pos", class: "readout" });
    const zMin = el("span", { id: "focus-min-z", class: "readout", text: "–" });
    const zMax = el("span", { id: "focus-max-z", class: "readout", text: "–" });
    const summary = el("p", { id: "review-summary", class: "hint" });
    this.dynamicFields.set("z-pos", zPos);
    this.dynamicFields.set("review-summary", summary);

    const step = this.numberInput("z-step", 5);
    const jog = (sign: number) =>
      void this.run(() => this.api.moveZ(sign * Number(step.value)));
    box.append(
      el("h2", { text: "Focus range & start" }),
      el(
        "div",
        { class: "jog-pad" },
        this.button("z-up", "Z+", () => jog(1)),
        this.button("z-down", "Z−", () => jog(-1)),
        this.labeled("step (µm)", step),
      ),
      el("p", {}, "Z: ", zPos),
      el(
        "div",
        { class: "corner-row" },
        this.button("focus-min", "Register Min", () =>
          void this.run(async () => {
            const r = await this.api.registerFocus("min");
            zMin.textContent = r.z.toFixed(2);
          }),
        ),
        zMin,
        this.button("focus-max", "Register Max", () =>
          void this.run(async () => {
            const r = await this.api.registerFocus("max");
            zMax.textContent = r.z.toFixed(2);
          }),
        ),
        zMax,
      ),
      el(
        "div",
        { class: "corner-row" },
        this.button("create-flattening", "Snap flattening reference", () =>
          void this.run(() => this.api.createFlattening()),
        ),
        this.button("toggle-flattening", "Toggle apply", () =>
          void this.run(() => this.api.toggleFlattening()),
        ),
      ),
      summary,
      this.button("start-acq", "Start Acquisition", () =>
        void this.run(() => this.api.startAcquisition()),
      ),
    );
    return box;
  }

  /** Configure the ROI canvas once the overview metadata reaches the
   * snapshot (it may land a refresh after the phase change). */
  private ensureOverviewLoaded(): void {
    const canvas = this.roiCanvas;
    const meta = this.store.snapshot?.overview_image;
    if (!canvas || canvas.overviewMeta || !meta) return;
    canvas.setOverview(meta, null);
    const img = new Image();
    img.onload = () => canvas.setImage(img);
    img.src = this.api.overviewImageUrl();
  }

  // ------------------------------------------------------------ readouts
  private updateReadouts(): void {
    this.ensureOverviewLoaded();
    const snap = this.store.snapshot;
    const stagePos = this.dynamicFields.get("stage-pos");
    if (stagePos && snap) {
      stagePos.textContent = `(${snap.stage.x.toFixed(1)}, ${snap.stage.y.toFixed(1)}) µm`;
    }
    const zPos = this.dynamicFields.get("z-pos");
    if (zPos && snap) {
      zPos.textContent = `${snap.stage.z.toFixed(2)} µm`;
    }
    const hint = this.dynamicFields.get("roi-hint");
    if (hint && this.roiCanvas) {
      hint.textContent = this.roiCanvas.lastRejection
        ? this.roiCanvas.lastRejection
        : `${this.roiCanvas.rects.length} region(s) drawn`;
    }
    const summary = this.dynamicFields.get("review-summary");
    if (summary && snap) {
      summary.textContent = summarize(snap);
    }
  }
}

function summarize(snap: StateSnapshot): string {
  const p = snap.params;
  const channels = Object.entries(p.channels)
    .map(([ch, ms]) => `${ch}@${ms}ms`)
    .join(", ");
  return (
    `${snap.rois.length} ROI(s) · ${p.duration_h} h every ${p.interval_min} min · ` +
    `${p.objective} · ${channels} · ${p.stitch_mode} (overlap ${p.overlap}) · ` +
    `z ${p.z_min_um}…${p.z_max_um} µm step ${p.z_step_um}`
  );
}
