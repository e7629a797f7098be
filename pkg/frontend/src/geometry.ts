/** Box math in image space.
 *
 * All mouse work happens on float rectangles in *image* coordinates;
 * screen pixels are converted through the view transform first. Only at
 * commit time is a rectangle rounded to the integer bbox the API stores,
 * so the exported geometry is independent of the zoom it was drawn at.
 */

import type { Bbox } from "./types.js";

/** Unordered corner pair in image coordinates (floats while dragging). */
export interface Rect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface Point {
  x: number;
  y: number;
}

/** screen = image * zoom + pan */
export interface ViewTransform {
  zoom: number;
  panX: number;
  panY: number;
}

export type HitZone = "nw" | "ne" | "sw" | "se" | "inside" | "none";

export function toImage(screen: Point, view: ViewTransform): Point {
  return {
    x: (screen.x - view.panX) / view.zoom,
    y: (screen.y - view.panY) / view.zoom,
  };
}

export function toScreen(image: Point, view: ViewTransform): Point {
  return {
    x: image.x * view.zoom + view.panX,
    y: image.y * view.zoom + view.panY,
  };
}

/** Order the corners so (x0, y0) is the top-left. */
export function normalize(rect: Rect): Rect {
  return {
    x0: Math.min(rect.x0, rect.x1),
    y0: Math.min(rect.y0, rect.y1),
    x1: Math.max(rect.x0, rect.x1),
    y1: Math.max(rect.y0, rect.y1),
  };
}

export function rectFromBbox(bbox: Bbox): Rect {
  return { x0: bbox[0], y0: bbox[1], x1: bbox[2], y1: bbox[3] };
}

/** Round to the integer pixel grid; the only float -> int step. */
export function rectToBbox(rect: Rect): Bbox {
  const r = normalize(rect);
  return [
    Math.round(r.x0),
    Math.round(r.y0),
    Math.round(r.x1),
    Math.round(r.y1),
  ];
}

export function clampBbox(bbox: Bbox, width: number, height: number): Bbox {
  const clamp = (v: number, hi: number) => Math.min(Math.max(v, 0), hi);
  return [
    clamp(bbox[0], width),
    clamp(bbox[1], height),
    clamp(bbox[2], width),
    clamp(bbox[3], height),
  ];
}

export function isZeroArea(bbox: Bbox): boolean {
  return bbox[2] <= bbox[0] || bbox[3] <= bbox[1];
}

export function translate(rect: Rect, dx: number, dy: number): Rect {
  return { x0: rect.x0 + dx, y0: rect.y0 + dy, x1: rect.x1 + dx, y1: rect.y1 + dy };
}

/** Pin the named corner of a normalized rect to the given point. */
export function resizeCorner(rect: Rect, corner: HitZone, to: Point): Rect {
  const r = normalize(rect);
  switch (corner) {
    case "nw":
      return { x0: to.x, y0: to.y, x1: r.x1, y1: r.y1 };
    case "ne":
      return { x0: r.x0, y0: to.y, x1: to.x, y1: r.y1 };
    case "sw":
      return { x0: to.x, y0: r.y0, x1: r.x1, y1: to.y };
    case "se":
      return { x0: r.x0, y0: r.y0, x1: to.x, y1: to.y };
    default:
      return r;
  }
}

/** Which part of the box the pointer is over; tolerance in image pixels
 * (pass handle_px / zoom so grab targets stay a constant screen size). */
export function hitTest(bbox: Bbox, pt: Point, tolerance: number): HitZone {
  const [x0, y0, x1, y1] = bbox;
  const near = (a: number, b: number) => Math.abs(a - b) <= tolerance;
  if (near(pt.x, x0) && near(pt.y, y0)) return "nw";
  if (near(pt.x, x1) && near(pt.y, y0)) return "ne";
  if (near(pt.x, x0) && near(pt.y, y1)) return "sw";
  if (near(pt.x, x1) && near(pt.y, y1)) return "se";
  if (pt.x >= x0 && pt.x <= x1 && pt.y >= y0 && pt.y <= y1) return "inside";
  return "none";
}
