/** Review-mode state: step through detections, verdict each one.
 *
 * Detections are held in descending probability order (stable for ties,
 * matching the server's own ordering). Verdicts only move forward from
 * pending; a confirmed or rejected item never flips back to pending.
 */

import type { DetectionRecord } from "./types.js";

export type VerdictState = "pending" | "confirmed" | "rejected";

export interface ReviewAction {
  index: number;
  verdict: "confirm" | "reject";
}

export interface ReviewCounts {
  confirmed: number;
  rejected: number;
  pending: number;
}

/** Probabilities render with exactly two decimals everywhere. */
export function formatProbability(p: number): string {
  return p.toFixed(2);
}

export class ReviewQueue {
  readonly detections: DetectionRecord[];
  readonly verdicts: VerdictState[];
  cursor = 0;

  constructor(detections: DetectionRecord[]) {
    this.detections = [...detections].sort(
      (a, b) => b.probability - a.probability,
    );
    this.verdicts = this.detections.map(() => "pending");
  }

  get isEmpty(): boolean {
    return this.detections.length === 0;
  }

  get current(): DetectionRecord | null {
    return this.detections[this.cursor] ?? null;
  }

  counts(): ReviewCounts {
    const counts: ReviewCounts = { confirmed: 0, rejected: 0, pending: 0 };
    for (const v of this.verdicts) {
      if (v === "confirmed") counts.confirmed += 1;
      else if (v === "rejected") counts.rejected += 1;
      else counts.pending += 1;
    }
    return counts;
  }

  get isComplete(): boolean {
    return this.counts().pending === 0;
  }

  next(): void {
    if (this.cursor < this.detections.length - 1) this.cursor += 1;
  }

  prev(): void {
    if (this.cursor > 0) this.cursor -= 1;
  }

  private verdictAt(index: number, verdict: "confirm" | "reject"): ReviewAction | null {
    if (index < 0 || index >= this.detections.length) return null;
    if (this.verdicts[index] !== "pending") return null;  // forward-only
    this.verdicts[index] = verdict === "confirm" ? "confirmed" : "rejected";
    this.advanceToPending();
    return { index, verdict };
  }

  confirm(): ReviewAction | null {
    return this.verdictAt(this.cursor, "confirm");
  }

  reject(): ReviewAction | null {
    return this.verdictAt(this.cursor, "reject");
  }

  /** After a verdict, land on the next pending item (searching forward,
   * then wrapping once); stay put when everything is settled. */
  advanceToPending(): void {
    const n = this.detections.length;
    for (let step = 1; step <= n; step += 1) {
      const i = (this.cursor + step) % n;
      if (this.verdicts[i] === "pending") {
        this.cursor = i;
        return;
      }
    }
  }

  /** Keyboard contract: y confirms, n rejects, arrows navigate. Returns
   * the verdict action the caller should POST, or null for pure moves. */
  handleKey(key: string): ReviewAction | null {
    switch (key) {
      case "y":
      case "Y":
        return this.confirm();
      case "n":
      case "N":
        return this.reject();
      case "ArrowRight":
      case "ArrowDown":
        this.next();
        return null;
      case "ArrowLeft":
      case "ArrowUp":
        this.prev();
        return null;
      default:
        return null;
    }
  }
}
