/** Live acquisition monitor: phase chip, progress, per-tile capture map,
 * autofocus/warning feeds, latest panorama with contrast windowing, and
 * the pause/resume/stop controls. Everything shown is a projection of
 * the store; every control is a plain endpoint call. */

import type { ApiClient } from "./api.js";
import { clear, el } from "./dom.js";
import type { UiStore } from "./store.js";
import { CHANNELS, type PhaseName } from "./types.js";

const PHASE_CLASS: Partial<Record<PhaseName, string>> = {
  Running: "chip running",
  Paused: "chip paused",
  Done: "chip done",
  Error: "chip error",
};

export class Monitor {
  readonly root: HTMLElement;

  private chip: HTMLElement;
  private connStatus: HTMLElement;
  private progressText: HTMLElement;
  private progressBar: HTMLElement;
  private captureMap: HTMLElement;
  private warningsList: HTMLElement;
  private afList: HTMLElement;
  private panoImg: HTMLImageElement;
  private panoCaption: HTMLElement;
  private roiSelect: HTMLSelectElement;
  private channelSelect: HTMLSelectElement;
  private loInput: HTMLInputElement;
  private hiInput: HTMLInputElement;
  private pauseBtn: HTMLButtonElement;
  private resumeBtn: HTMLButtonElement;
  private stopBtn: HTMLButtonElement;
  private errorLine: HTMLElement;
  private panoVersion = -1;
  private contrastBump = 0;

  constructor(
    root: HTMLElement,
    private readonly api: ApiClient,
    private readonly store: UiStore,
  ) {
    this.root = root;
    this.chip = el("span", { id: "phase-chip", class: "chip", text: "Idle" });
    this.connStatus = el("span", { id: "conn-status", class: "conn", text: "" });
    this.progressText = el("span", { id: "progress-text", text: "" });
    this.progressBar = el("div", { id: "progress-bar", class: "bar-fill" });
    this.captureMap = el("div", { id: "capture-map", class: "capture-map" });
    this.warningsList = el("ul", { id: "warnings-list", class: "feed" });
    this.afList = el("ul", { id: "af-list", class: "feed" });
    this.panoImg = el("img", { id: "pano-img", alt: "latest stitched frame" });
    this.panoCaption = el("p", { id: "pano-caption", class: "hint", text: "" });
    this.roiSelect = el("select", { id: "contrast-roi" });
    this.channelSelect = el("select", { id: "contrast-channel" });
    this.loInput = el("input", { id: "contrast-lo", type: "number", value: "0" });
    this.hiInput = el("input", { id: "contrast-hi", type: "number", value: "255" });
    this.pauseBtn = this.button("pause-btn", "Pause", () =>
      void this.api.pauseAcquisition().catch(() => {}),
    );
    this.resumeBtn = this.button("resume-btn", "Resume", () =>
      void this.api.resumeAcquisition().catch(() => {}),
    );
    this.stopBtn = this.button("stop-btn", "Stop", () =>
      void this.api.stopAcquisition().catch(() => {}),
    );
    this.errorLine = el("p", { id: "monitor-error", class: "error-box" });
    this.build();
    store.subscribe(() => this.render());
    this.render();
  }

  private button(id: string, label: string, onClick: () => void): HTMLButtonElement {
    const b = el("button", { id, type: "button", text: label });
    b.addEventListener("click", onClick);
    return b;
  }

  private build(): void {
    const applyContrast = this.button("contrast-apply", "Apply window", () =>
      void this.api
        .setContrast(
          Number(this.roiSelect.value || "-1"),
          this.channelSelect.value || "PC",
          Number(this.loInput.value),
          Number(this.hiInput.value),
        )
        .then(() => {
          this.contrastBump += 1;
          this.panoVersion = -1; // force an image reload with the new window
          this.render();
        })
        .catch(() => {}),
    );
    for (const ch of CHANNELS) {
      this.channelSelect.append(el("option", { value: ch, text: ch }));
    }
    this.root.append(
      el("header", { class: "monitor-head" }, this.chip, this.connStatus),
      el(
        "section",
        { class: "panel" },
        el("h3", { text: "Progress" }),
        el("p", {}, this.progressText),
        el("div", { class: "bar" }, this.progressBar),
        this.captureMap,
        el(
          "div",
          { class: "corner-row" },
          this.pauseBtn,
          this.resumeBtn,
          this.stopBtn,
        ),
        this.errorLine,
      ),
      el(
        "section",
        { class: "panel" },
        el("h3", { text: "Latest stitched frame" }),
        this.panoImg,
        this.panoCaption,
        el(
          "div",
          { class: "corner-row" },
          el("label", { text: "ROI" }),
          this.roiSelect,
          el("label", { text: "channel" }),
          this.channelSelect,
          el("label", { text: "lo" }),
          this.loInput,
          el("label", { text: "hi" }),
          this.hiInput,
          applyContrast,
        ),
      ),
      el(
        "section",
        { class: "panel" },
        el("h3", { text: "Autofocus" }),
        this.afList,
        el("h3", { text: "Warnings" }),
        this.warningsList,
      ),
    );
  }

  private render(): void {
    const store = this.store;
    const phase = store.phase;
    this.chip.textContent = phase;
    this.chip.className = PHASE_CLASS[phase] ?? "chip";
    this.connStatus.textContent =
      store.connection === "connected" ? "" : "reconnecting…";

    const prog = store.progress;
    this.progressText.textContent =
      `timestep ${prog.timestep}/${prog.n_timesteps} · ` +
      `tiles ${prog.tiles_done}/${prog.total}`;
    const frac = prog.total > 0 ? Math.min(1, prog.tiles_done / prog.total) : 0;
    this.progressBar.style.width = `${(frac * 100).toFixed(1)}%`;

    this.pauseBtn.disabled = phase !== "Running";
    this.resumeBtn.disabled = phase !== "Paused";
    this.stopBtn.disabled = phase !== "Running" && phase !== "Paused";

    this.errorLine.textContent = store.snapshot?.last_error ?? "";
    this.renderCaptureMap();
    this.renderFeeds();
    this.syncRoiOptions();
    this.renderPanorama();
  }

  private renderCaptureMap(): void {
    clear(this.captureMap);
    for (const [roi, tiles] of this.store.captureMap) {
      const label = roi < 0 ? "overview" : `ROI ${roi}`;
      this.captureMap.append(
        el("span", { class: "capture-roi", text: `${label}: ${tiles.size} tiles` }),
      );
    }
  }

  private renderFeeds(): void {
    clear(this.warningsList);
    for (const w of this.store.warnings.slice(-8)) {
      this.warningsList.append(
        el("li", { class: `warn ${w.kind.toLowerCase()}`, text: `${w.kind}: ${w.message}` }),
      );
    }
    clear(this.afList);
    for (const af of this.store.autofocus.slice(-5)) {
      const text = af.ok
        ? `ok at (${af.x.toFixed(0)}, ${af.y.toFixed(0)}) → z ${af.z?.toFixed(2)}`
        : `failed at (${af.x.toFixed(0)}, ${af.y.toFixed(0)})`;
      this.afList.append(el("li", { class: af.ok ? "af-ok" : "af-fail", text }));
    }
  }

  private syncRoiOptions(): void {
    const want = this.store.snapshot?.rois.length ?? 0;
    if (this.roiSelect.options.length !== want) {
      clear(this.roiSelect);
      for (let i = 0; i < want; i++) {
        this.roiSelect.append(el("option", { value: String(i), text: `ROI ${i}` }));
      }
    }
  }

  private renderPanorama(): void {
    const roi = Number(this.roiSelect.value || "0");
    const channel = this.channelSelect.value || "PC";
    const frame = this.store.latestFrames.get(`${roi}/${channel}`);
    if (!frame) return;
    const version = frame.version * 1000 + this.contrastBump;
    if (version !== this.panoVersion) {
      this.panoVersion = version;
      this.panoImg.src = this.api.frameUrl(roi, frame.timestep, channel, version);
      this.panoCaption.textContent = `ROI ${roi} · timestep ${frame.timestep} · ${channel}`;
    }
  }
}
