import { describe, expect, it } from "vitest";

import {
  clampBbox,
  hitTest,
  isZeroArea,
  normalize,
  rectToBbox,
  resizeCorner,
  toImage,
  toScreen,
  translate,
} from "../src/geometry.js";

describe("view transform", () => {
  it("round-trips screen and image coordinates", () => {
    const view = { zoom: 4, panX: 37, panY: -12 };
    const image = { x: 5.25, y: 9.5 };
    const back = toImage(toScreen(image, view), view);
    expect(back.x).toBeCloseTo(image.x, 12);
    expect(back.y).toBeCloseTo(image.y, 12);
  });

  it("maps boxes drawn at 4x zoom to integer original-space pixels", () => {
    const view = { zoom: 4, panX: 0, panY: 0 };
    const a = toImage({ x: 12, y: 16 }, view);   // image (3, 4)
    const b = toImage({ x: 61, y: 153 }, view);  // image (15.25, 38.25)
    const bbox = rectToBbox({ x0: a.x, y0: a.y, x1: b.x, y1: b.y });
    expect(bbox).toEqual([3, 4, 15, 38]);
    expect(bbox.every((v) => Number.isInteger(v))).toBe(true);
  });

  it("rounds identically regardless of zoom level", () => {
    for (const zoom of [0.5, 1, 2, 4, 8]) {
      const view = { zoom, panX: 11, panY: 3 };
      const a = toScreen({ x: 3, y: 4 }, view);
      const b = toScreen({ x: 15, y: 38 }, view);
      const ia = toImage(a, view);
      const ib = toImage(b, view);
      expect(rectToBbox({ x0: ia.x, y0: ia.y, x1: ib.x, y1: ib.y }))
        .toEqual([3, 4, 15, 38]);
    }
  });
});

describe("rect operations", () => {
  it("normalizes inverted corners", () => {
    expect(normalize({ x0: 10, y0: 20, x1: 2, y1: 5 }))
      .toEqual({ x0: 2, y0: 5, x1: 10, y1: 20 });
  });

  it("clamps to the raster", () => {
    expect(clampBbox([-5, -2, 150, 90], 100, 80)).toEqual([0, 0, 100, 80]);
  });

  it("flags zero-area boxes", () => {
    expect(isZeroArea([5, 5, 5, 9])).toBe(true);
    expect(isZeroArea([5, 5, 9, 5])).toBe(true);
    expect(isZeroArea([5, 5, 6, 6])).toBe(false);
  });

  it("translates without resizing", () => {
    const moved = translate({ x0: 1, y0: 2, x1: 4, y1: 6 }, 10, -1);
    expect(moved).toEqual({ x0: 11, y0: 1, x1: 14, y1: 5 });
  });

  it("resizes by pinning the dragged corner", () => {
    const rect = { x0: 10, y0: 10, x1: 20, y1: 20 };
    expect(resizeCorner(rect, "se", { x: 25, y: 31 }))
      .toEqual({ x0: 10, y0: 10, x1: 25, y1: 31 });
    expect(resizeCorner(rect, "nw", { x: 5, y: 7 }))
      .toEqual({ x0: 5, y0: 7, x1: 20, y1: 20 });
  });
});

describe("hit testing", () => {
  const bbox: [number, number, number, number] = [10, 10, 30, 24];

  it("prefers corners over the interior", () => {
    expect(hitTest(bbox, { x: 10.5, y: 10.5 }, 2)).toBe("nw");
    expect(hitTest(bbox, { x: 29, y: 23.5 }, 2)).toBe("se");
    expect(hitTest(bbox, { x: 30, y: 10 }, 2)).toBe("ne");
    expect(hitTest(bbox, { x: 10, y: 24 }, 2)).toBe("sw");
  });

  it("reports inside and outside", () => {
    expect(hitTest(bbox, { x: 20, y: 17 }, 2)).toBe("inside");
    expect(hitTest(bbox, { x: 40, y: 17 }, 2)).toBe("none");
  });
});
