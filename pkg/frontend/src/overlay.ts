/** Canvas rendering: expert boxes in white, detections in red. */

import { formatProbability } from "./review.js";
import type { ViewTransform } from "./geometry.js";
import type { AnnotationObject, Bbox, DetectionRecord } from "./types.js";

export const TRUTH_COLOR = "#ffffff";
export const DETECTION_COLOR = "#e83030";
export const SELECTION_COLOR = "#53b1fd";

function boxPath(ctx: CanvasRenderingContext2D, bbox: Bbox, view: ViewTransform) {
  const x = bbox[0] * view.zoom + view.panX;
  const y = bbox[1] * view.zoom + view.panY;
  const w = (bbox[2] - bbox[0]) * view.zoom;
  const h = (bbox[3] - bbox[1]) * view.zoom;
  ctx.strokeRect(x, y, w, h);
  return { x, y, w, h };
}

export function drawBox(
  ctx: CanvasRenderingContext2D,
  bbox: Bbox,
  view: ViewTransform,
  color: string,
  lineWidth = 2,
  dashed = false,
): void {
  ctx.save();
  ctx.strokeStyle = color;
  ctx.lineWidth = lineWidth;
  ctx.setLineDash(dashed ? [6, 4] : []);
  boxPath(ctx, bbox, view);
  ctx.restore();
}

export function drawHandles(
  ctx: CanvasRenderingContext2D,
  bbox: Bbox,
  view: ViewTransform,
  color: string,
): void {
  const size = 6;
  ctx.save();
  ctx.fillStyle = color;
  for (const [bx, by] of [
    [bbox[0], bbox[1]], [bbox[2], bbox[1]],
    [bbox[0], bbox[3]], [bbox[2], bbox[3]],
  ]) {
    const x = bx * view.zoom + view.panX;
    const y = by * view.zoom + view.panY;
    ctx.fillRect(x - size / 2, y - size / 2, size, size);
  }
  ctx.restore();
}

export function drawAnnotations(
  ctx: CanvasRenderingContext2D,
  objects: AnnotationObject[],
  view: ViewTransform,
  selected: number | null,
): void {
  objects.forEach((obj, i) => {
    const active = i === selected;
    drawBox(ctx, obj.bbox, view, active ? SELECTION_COLOR : TRUTH_COLOR, 2);
    if (active) drawHandles(ctx, obj.bbox, view, SELECTION_COLOR);
    ctx.save();
    ctx.fillStyle = active ? SELECTION_COLOR : TRUTH_COLOR;
    ctx.font = "12px sans-serif";
    ctx.fillText(
      obj.label,
      obj.bbox[0] * view.zoom + view.panX,
      obj.bbox[1] * view.zoom + view.panY - 4,
    );
    ctx.restore();
  });
}

export function drawDetections(
  ctx: CanvasRenderingContext2D,
  detections: DetectionRecord[],
  view: ViewTransform,
  activeIndex: number | null,
): void {
  detections.forEach((det, i) => {
    const active = i === activeIndex;
    drawBox(ctx, det.bbox, view, DETECTION_COLOR, active ? 3 : 1.5);
    ctx.save();
    ctx.fillStyle = DETECTION_COLOR;
    ctx.font = active ? "bold 12px sans-serif" : "12px sans-serif";
    ctx.fillText(
      formatProbability(det.probability),
      det.bbox[0] * view.zoom + view.panX,
      det.bbox[3] * view.zoom + view.panY + 12,
    );
    ctx.restore();
  });
}
