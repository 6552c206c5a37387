/** Overview-pixel ↔ stage-micrometre transforms.
 *
 * The overview panorama's top-left pixel edge sits at the registered
 * upper-left stage corner; pixel coordinates grow right/down exactly as
 * stage x/y do, scaled by the overview objective's pixel size. Rectangle
 * corners are pixel edges, so the round trip px → µm → px is exact up to
 * floating-point noise.
 */

import type { OverviewMeta } from "./types.js";

/** Axis-aligned rectangle; corners in draw order, not necessarily sorted. */
export interface Rect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export function pxToUm(meta: OverviewMeta, xPx: number, yPx: number): [number, number] {
  return [
    meta.origin_um[0] + xPx * meta.pixel_size_um,
    meta.origin_um[1] + yPx * meta.pixel_size_um,
  ];
}

export function umToPx(meta: OverviewMeta, xUm: number, yUm: number): [number, number] {
  return [
    (xUm - meta.origin_um[0]) / meta.pixel_size_um,
    (yUm - meta.origin_um[1]) / meta.pixel_size_um,
  ];
}

export function rectPxToUm(meta: OverviewMeta, r: Rect): [number, number, number, number] {
  const [x0, y0] = pxToUm(meta, r.x0, r.y0);
  const [x1, y1] = pxToUm(meta, r.x1, r.y1);
  return [x0, y0, x1, y1];
}

export function rectUmToPx(meta: OverviewMeta, um: readonly number[]): Rect {
  const [x0, y0] = umToPx(meta, um[0], um[1]);
  const [x1, y1] = umToPx(meta, um[2], um[3]);
  return { x0, y0, x1, y1 };
}

/** Sort corners so x0 ≤ x1 and y0 ≤ y1 (drags may go any direction). */
export function normalizeRect(r: Rect): Rect {
  return {
    x0: Math.min(r.x0, r.x1),
    y0: Math.min(r.y0, r.y1),
    x1: Math.max(r.x0, r.x1),
    y1: Math.max(r.y0, r.y1),
  };
}

/** Clamp a normalized rect to the overview bounds. */
export function clampRectPx(meta: OverviewMeta, r: Rect): { rect: Rect; clamped: boolean } {
  const clamp = (v: number, hi: number) => Math.min(Math.max(v, 0), hi);
  const rect = {
    x0: clamp(r.x0, meta.width),
    y0: clamp(r.y0, meta.height),
    x1: clamp(r.x1, meta.width),
    y1: clamp(r.y1, meta.height),
  };
  const clamped =
    rect.x0 !== r.x0 || rect.y0 !== r.y0 || rect.x1 !== r.x1 || rect.y1 !== r.y1;
  return { rect, clamped };
}

export function rectWidth(r: Rect): number {
  return Math.abs(r.x1 - r.x0);
}

export function rectHeight(r: Rect): number {
  return Math.abs(r.y1 - r.y0);
}
