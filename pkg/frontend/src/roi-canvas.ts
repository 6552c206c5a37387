/** Drag-to-draw rectangle ROIs over the overview panorama.
 *
 * The canvas backing store is sized 1:1 with overview pixels, so every
 * committed rectangle is expressed directly in overview-pixel
 * coordinates; the on-screen CSS size only scales the presentation.
 * Mouse positions are mapped CSS → overview px through the live bounding
 * rect, which keeps coordinates exact at any display scale or device
 * pixel ratio.
 */

import {
  clampRectPx,
  normalizeRect,
  rectHeight,
  rectPxToUm,
  rectWidth,
  type Rect,
} from "./coords.js";
import type { OverviewMeta } from "./types.js";

export interface CommittedRect {
  rect: Rect;
  /** True when the drag left the overview and the rect was pulled back in. */
  clamped: boolean;
}

/** Drags smaller than this many overview pixels on a side are rejected. */
export const MIN_RECT_PX = 2;

export class RoiCanvas {
  readonly canvas: HTMLCanvasElement;
  /** Committed rectangles in draw order (draw order = acquisition order). */
  rects: CommittedRect[] = [];
  /** Set when the last drag was rejected (zero-area); cleared on success. */
  lastRejection: string | null = null;

  private meta: OverviewMeta | null = null;
  private image: CanvasImageSource | null = null;
  private draft: Rect | null = null;
  private dragging = false;
  private ctx: CanvasRenderingContext2D | null | undefined;
  private readonly onChange: () => void;

  constructor(canvas: HTMLCanvasElement, onChange: () => void = () => {}) {
    this.canvas = canvas;
    this.onChange = onChange;
    canvas.addEventListener("mousedown", this.onMouseDown);
    canvas.addEventListener("mousemove", this.onMouseMove);
    canvas.addEventListener("mouseup", this.onMouseUp);
    canvas.addEventListener("mouseleave", this.onMouseLeave);
  }

  setOverview(meta: OverviewMeta, image: CanvasImageSource | null): void {
    this.meta = meta;
    this.image = image;
    this.canvas.width = meta.width;
    this.canvas.height = meta.height;
    const displayWidth = Math.min(meta.width, 640);
    this.canvas.style.width = `${displayWidth}px`;
    this.canvas.style.aspectRatio = `${meta.width} / ${meta.height}`;
    this.rects = [];
    this.draft = null;
    this.lastRejection = null;
    this.paint();
    this.onChange();
  }

  get overviewMeta(): OverviewMeta | null {
    return this.meta;
  }

  /** Swap in the decoded overview image without touching drawn rects. */
  setImage(image: CanvasImageSource | null): void {
    this.image = image;
    this.paint();
  }

  /** Committed rectangles converted to stage µm, in draw order. */
  roisUm(): number[][] {
    if (!this.meta) return [];
    return this.rects.map((r) => [...rectPxToUm(this.meta!, r.rect)]);
  }

  undo(): void {
    if (this.rects.pop()) {
      this.paint();
      this.onChange();
    }
  }

  clear(): void {
    if (this.rects.length || this.draft) {
      this.rects = [];
      this.draft = null;
      this.paint();
      this.onChange();
    }
  }

  /** Map a mouse event to overview-pixel coordinates. */
  private toImagePx(ev: MouseEvent): [number, number] {
    const bounds = this.canvas.getBoundingClientRect();
    const scaleX = bounds.width > 0 ? this.canvas.width / bounds.width : 1;
    const scaleY = bounds.height > 0 ? this.canvas.height / bounds.height : 1;
    return [(ev.clientX - bounds.left) * scaleX, (ev.clientY - bounds.top) * scaleY];
  }

  private onMouseDown = (ev: MouseEvent): void => {
    if (!this.meta) return;
    const [x, y] = this.toImagePx(ev);
    this.dragging = true;
    this.draft = { x0: x, y0: y, x1: x, y1: y };
    this.paint();
  };

  private onMouseMove = (ev: MouseEvent): void => {
    if (!this.dragging || !this.draft) return;
    const [x, y] = this.toImagePx(ev);
    this.draft.x1 = x;
    this.draft.y1 = y;
    this.paint();
  };

  private onMouseUp = (ev: MouseEvent): void => {
    if (!this.dragging || !this.draft || !this.meta) return;
    const [x, y] = this.toImagePx(ev);
    this.draft.x1 = x;
    this.draft.y1 = y;
    this.commitDraft();
  };

  private onMouseLeave = (): void => {
    if (this.dragging) this.commitDraft();
  };

  private commitDraft(): void {
    const meta = this.meta;
    const draft = this.draft;
    this.dragging = false;
    this.draft = null;
    if (!meta || !draft) return;
    const { rect, clamped } = clampRectPx(meta, normalizeRect(draft));
    if (rectWidth(rect) < MIN_RECT_PX || rectHeight(rect) < MIN_RECT_PX) {
      this.lastRejection = "rectangle too small — drag out a region";
    } else {
      this.lastRejection = null;
      this.rects.push({ rect, clamped });
    }
    this.paint();
    this.onChange();
  }

  /** Repaint; skipped where no 2D context exists (non-rendering DOM). */
  private paint(): void {
    if (this.ctx === undefined) {
      try {
        this.ctx = this.canvas.getContext("2d");
      } catch {
        this.ctx = null;
      }
    }
    const ctx = this.ctx;
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.image) {
      ctx.drawImage(this.image, 0, 0, this.canvas.width, this.canvas.height);
    } else {
      ctx.fillStyle = "#202830";
      ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    }
    ctx.lineWidth = Math.max(1, this.canvas.width / 320);
    this.rects.forEach((r, i) => {
      ctx.strokeStyle = r.clamped ? "#e0a030" : "#40c080";
      this.strokeRect(ctx, r.rect);
      ctx.fillStyle = ctx.strokeStyle;
      ctx.font = `${8 * ctx.lineWidth}px sans-serif`;
      ctx.fillText(String(i + 1), r.rect.x0 + 2 * ctx.lineWidth, r.rect.y0 + 9 * ctx.lineWidth);
    });
    if (this.draft) {
      ctx.strokeStyle = "#80b0e0";
      ctx.setLineDash([4, 3]);
      this.strokeRect(ctx, normalizeRect(this.draft));
      ctx.setLineDash([]);
    }
  }

  private strokeRect(ctx: CanvasRenderingContext2D, r: Rect): void {
    ctx.strokeRect(r.x0, r.y0, r.x1 - r.x0, r.y1 - r.y0);
  }
}
