import { describe, expect, it } from "vitest";

import { AnnotateSession } from "../src/annotate.js";
import type { AnnotationDoc } from "../src/types.js";

function doc(overrides: Partial<AnnotationDoc> = {}): AnnotationDoc {
  return {
    image_id: "img-1",
    width: 100,
    height: 80,
    version: "v1",
    objects: [{ label: "cell", bbox: [10, 10, 30, 24] }],
    ...overrides,
  };
}

describe("drawing", () => {
  it("commits an integer, clamped box and marks the session dirty", () => {
    const session = new AnnotateSession(doc(), "cell");
    session.beginDraw({ x: 40.2, y: 50.6 });
    session.updateDrag({ x: 120.9, y: 70.4 });   // runs past the right edge
    const result = session.commitDrag();
    expect(result).toEqual({ index: 1 });
    expect(session.objects[1]).toEqual({ label: "cell", bbox: [40, 51, 100, 70] });
    expect(session.dirty).toBe(true);
    expect(session.selected).toBe(1);
  });

  it("discards zero-area drafts client-side", () => {
    const session = new AnnotateSession(doc());
    session.beginDraw({ x: 40, y: 50 });
    session.updateDrag({ x: 40.3, y: 50.2 });    // rounds to zero area
    expect(session.commitDrag()).toBeNull();
    expect(session.objects).toHaveLength(1);
    expect(session.dirty).toBe(false);
  });

  it("exposes the draft while dragging", () => {
    const session = new AnnotateSession(doc());
    expect(session.draft()).toBeNull();
    session.beginDraw({ x: 1, y: 2 });
    session.updateDrag({ x: 9, y: 12 });
    expect(session.draft()).toEqual([1, 2, 9, 12]);
    session.cancelDrag();
    expect(session.draft()).toBeNull();
  });
});

describe("editing", () => {
  it("moves a box rigidly", () => {
    const session = new AnnotateSession(doc());
    session.beginEdit(0, "inside", { x: 20, y: 17 });
    session.updateDrag({ x: 25, y: 20 });
    session.commitDrag();
    expect(session.objects[0].bbox).toEqual([15, 13, 35, 27]);
  });

  it("resizes via a corner and reverts zero-area results", () => {
    const session = new AnnotateSession(doc());
    session.beginEdit(0, "se", { x: 30, y: 24 });
    session.updateDrag({ x: 44, y: 30 });
    session.commitDrag();
    expect(session.objects[0].bbox).toEqual([10, 10, 44, 30]);

    session.beginEdit(0, "se", { x: 44, y: 30 });
    session.updateDrag({ x: 10, y: 10 });        // collapse onto nw corner
    expect(session.commitDrag()).toBeNull();
    expect(session.objects[0].bbox).toEqual([10, 10, 44, 30]);  // unchanged
  });

  it("deletes and relabels", () => {
    const session = new AnnotateSession(doc());
    session.setLabel(0, "parasite");
    expect(session.objects[0].label).toBe("parasite");
    session.selected = 0;
    session.deleteSelected();
    expect(session.objects).toHaveLength(0);
    expect(session.dirty).toBe(true);
  });
});

describe("sync and conflict merge", () => {
  it("clears the dirty flag when the server copy is adopted", () => {
    const session = new AnnotateSession(doc());
    session.beginDraw({ x: 1, y: 1 });
    session.updateDrag({ x: 9, y: 9 });
    session.commitDrag();
    session.applyServer("v2", session.objects);
    expect(session.dirty).toBe(false);
    expect(session.version).toBe("v2");
    expect(session.localAdditions()).toHaveLength(0);
  });

  it("keeps local additions on top of the server copy after a 409", () => {
    const session = new AnnotateSession(doc(), "cell");
    session.beginDraw({ x: 50, y: 50 });
    session.updateDrag({ x: 60, y: 60 });
    session.commitDrag();

    // meanwhile another writer deleted the original box and added one
    const serverDoc = doc({
      version: "v9",
      objects: [{ label: "other", bbox: [1, 1, 5, 5] }],
    });
    const outcome = session.mergeWithServer(serverDoc);
    expect(outcome).toEqual({ kept: 1, duplicates: 0 });
    expect(session.version).toBe("v9");
    expect(session.dirty).toBe(true);
    expect(session.objects).toEqual([
      { label: "other", bbox: [1, 1, 5, 5] },
      { label: "cell", bbox: [50, 50, 60, 60] },
    ]);
  });

  it("deduplicates additions the other writer already saved", () => {
    const session = new AnnotateSession(doc(), "cell");
    session.beginDraw({ x: 50, y: 50 });
    session.updateDrag({ x: 60, y: 60 });
    session.commitDrag();
    const serverDoc = doc({
      version: "v9",
      objects: [
        { label: "cell", bbox: [10, 10, 30, 24] },
        { label: "cell", bbox: [50, 50, 60, 60] },
      ],
    });
    const outcome = session.mergeWithServer(serverDoc);
    expect(outcome).toEqual({ kept: 0, duplicates: 1 });
    expect(session.dirty).toBe(false);
    expect(session.objects).toHaveLength(2);
  });
});
