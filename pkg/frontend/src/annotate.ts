/** Annotate-mode state machine, free of DOM concerns.
 *
 * The canvas layer feeds image-space pointer events in; the session
 * tracks draft geometry, selection, the dirty flag, and the version
 * token handshake. Zero-area boxes never survive a commit, and every
 * committed bbox is integer and clamped to the raster.
 */

import {
  clampBbox,
  isZeroArea,
  normalize,
  rectFromBbox,
  rectToBbox,
  resizeCorner,
  translate,
} from "./geometry.js";
import type { HitZone, Point, Rect } from "./geometry.js";
import type { AnnotationDoc, AnnotationObject, Bbox } from "./types.js";

export type DragMode = "draw" | "move" | "nw" | "ne" | "sw" | "se";

interface DragState {
  mode: DragMode;
  /** Object being edited; -1 while drawing a new box. */
  index: number;
  origin: Point;
  startRect: Rect;
  rect: Rect;
}

function sameObject(a: AnnotationObject, b: AnnotationObject): boolean {
  return (
    a.label === b.label &&
    a.bbox.length === b.bbox.length &&
    a.bbox.every((v, i) => v === b.bbox[i])
  );
}

export interface MergeOutcome {
  /** Local not-yet-saved additions re-applied on top of the server copy. */
  kept: number;
  /** Local additions already present server-side (deduplicated). */
  duplicates: number;
}

export class AnnotateSession {
  readonly imageId: string;
  readonly width: number;
  readonly height: number;
  objects: AnnotationObject[];
  version: string;
  selected: number | null = null;
  dirty = false;

  private baseline: AnnotationObject[];
  private drag: DragState | null = null;

  constructor(doc: AnnotationDoc, private readonly defaultLabel = "object") {
    this.imageId = doc.image_id;
    this.width = doc.width;
    this.height = doc.height;
    this.objects = doc.objects.map((o) => ({ ...o, bbox: [...o.bbox] as Bbox }));
    this.baseline = this.objects.map((o) => ({ ...o }));
    this.version = doc.version;
  }

  // -- drag lifecycle -------------------------------------------------------

  beginDraw(pt: Point): void {
    this.drag = {
      mode: "draw",
      index: -1,
      origin: pt,
      startRect: { x0: pt.x, y0: pt.y, x1: pt.x, y1: pt.y },
      rect: { x0: pt.x, y0: pt.y, x1: pt.x, y1: pt.y },
    };
    this.selected = null;
  }

  beginEdit(index: number, zone: HitZone, pt: Point): void {
    if (zone === "none" || index < 0 || index >= this.objects.length) return;
    const rect = normalize(rectFromBbox(this.objects[index].bbox));
    this.drag = {
      mode: zone === "inside" ? "move" : zone,
      index,
      origin: pt,
      startRect: rect,
      rect,
    };
    this.selected = index;
  }

  updateDrag(pt: Point): void {
    if (!this.drag) return;
    const d = this.drag;
    if (d.mode === "draw") {
      d.rect = { x0: d.origin.x, y0: d.origin.y, x1: pt.x, y1: pt.y };
    } else if (d.mode === "move") {
      d.rect = translate(d.startRect, pt.x - d.origin.x, pt.y - d.origin.y);
    } else {
      d.rect = resizeCorner(d.startRect, d.mode, pt);
    }
  }

  /** Draft bbox for rendering while the mouse is down. */
  draft(): Bbox | null {
    return this.drag ? rectToBbox(this.drag.rect) : null;
  }

  get dragging(): boolean {
    return this.drag !== null;
  }

  /** Land the drag. Zero-area drafts are rejected: a new draw is
   * discarded, an edit reverts to the pre-drag geometry. */
  commitDrag(): { index: number } | null {
    if (!this.drag) return null;
    const d = this.drag;
    this.drag = null;
    const bbox = clampBbox(rectToBbox(d.rect), this.width, this.height);
    if (isZeroArea(bbox)) {
      return null;
    }
    if (d.mode === "draw") {
      this.objects.push({ label: this.defaultLabel, bbox });
      this.selected = this.objects.length - 1;
      this.dirty = true;
      return { index: this.selected };
    }
    this.objects[d.index] = { ...this.objects[d.index], bbox };
    this.dirty = true;
    return { index: d.index };
  }

  cancelDrag(): void {
    this.drag = null;
  }

  // -- edits ----------------------------------------------------------------

  deleteObject(index: number): void {
    if (index < 0 || index >= this.objects.length) return;
    this.objects.splice(index, 1);
    this.selected = null;
    this.dirty = true;
  }

  deleteSelected(): void {
    if (this.selected !== null) this.deleteObject(this.selected);
  }

  setLabel(index: number, label: string): void {
    if (index < 0 || index >= this.objects.length || !label) return;
    this.objects[index] = { ...this.objects[index], label };
    this.dirty = true;
  }

  // -- sync -----------------------------------------------------------------

  payload(): { version: string; objects: AnnotationObject[] } {
    return { version: this.version, objects: this.objects };
  }

  /** Adopt the server's copy after a successful PUT or a fresh GET. */
  applyServer(version: string, objects: AnnotationObject[]): void {
    this.objects = objects.map((o) => ({ ...o, bbox: [...o.bbox] as Bbox }));
    this.baseline = this.objects.map((o) => ({ ...o }));
    this.version = version;
    this.selected = null;
    this.dirty = false;
  }

  /** Local additions since the last sync (what a 409 merge must keep). */
  localAdditions(): AnnotationObject[] {
    return this.objects.filter(
      (o) => !this.baseline.some((b) => sameObject(o, b)),
    );
  }

  /** Resolve a 409: take the server copy, re-apply local additions that
   * the other writer did not already store. The session stays dirty when
   * anything was kept, so the user can save again with the new token. */
  mergeWithServer(doc: AnnotationDoc): MergeOutcome {
    const additions = this.localAdditions();
    const merged = doc.objects.map((o) => ({ ...o, bbox: [...o.bbox] as Bbox }));
    let kept = 0;
    let duplicates = 0;
    for (const local of additions) {
      if (merged.some((o) => sameObject(o, local))) {
        duplicates += 1;
      } else {
        merged.push(local);
        kept += 1;
      }
    }
    this.objects = merged;
    this.baseline = doc.objects.map((o) => ({ ...o }));
    this.version = doc.version;
    this.selected = null;
    this.dirty = kept > 0;
    return { kept, duplicates };
  }
}
