/** DOM bootstrap: wires the canvas, sidebar and keyboard to the API.
 *
 * All geometry/state logic lives in the imported modules; this file only
 * translates browser events into calls on them and repaints.
 */

import { AnnotateSession } from "./annotate.js";
import { ApiClient, ConflictError } from "./api.js";
import { hitTest, toImage } from "./geometry.js";
import type { Point, ViewTransform } from "./geometry.js";
import { drawAnnotations, drawBox, drawDetections, DETECTION_COLOR } from "./overlay.js";
import { formatProbability, ReviewQueue } from "./review.js";
import type { DetectionRecord, ImageSummary, ModelSummary } from "./types.js";

type Mode = "annotate" | "review";

const api = new ApiClient("");

const canvas = document.getElementById("canvas") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const imageList = document.getElementById("image-list")!;
const modelSelect = document.getElementById("model-select") as HTMLSelectElement;
const statusLine = document.getElementById("status")!;
const countsBar = document.getElementById("counts")!;
const saveButton = document.getElementById("save") as HTMLButtonElement;
const runButton = document.getElementById("run-detect") as HTMLButtonElement;
const annotateButton = document.getElementById("mode-annotate") as HTMLButtonElement;
const reviewButton = document.getElementById("mode-review") as HTMLButtonElement;

let mode: Mode = "annotate";
let images: ImageSummary[] = [];
let models: ModelSummary[] = [];
let raster: HTMLImageElement | null = null;
let session: AnnotateSession | null = null;
let queue: ReviewQueue | null = null;
let detections: DetectionRecord[] = [];
let view: ViewTransform = { zoom: 1, panX: 0, panY: 0 };
let panning = false;
let panStart: Point = { x: 0, y: 0 };

function status(text: string): void {
  statusLine.textContent = text;
}

function canvasPoint(event: MouseEvent): Point {
  const rect = canvas.getBoundingClientRect();
  return { x: event.clientX - rect.left, y: event.clientY - rect.top };
}

function fitView(): void {
  if (!session) return;
  const zoom = Math.min(
    canvas.width / session.width,
    canvas.height / session.height,
  );
  view = {
    zoom,
    panX: (canvas.width - session.width * zoom) / 2,
    panY: (canvas.height - session.height * zoom) / 2,
  };
}

function render(): void {
  ctx.fillStyle = "#14161a";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (!raster || !session) return;
  ctx.save();
  ctx.imageSmoothingEnabled = view.zoom < 1;
  ctx.translate(view.panX, view.panY);
  ctx.scale(view.zoom, view.zoom);
  ctx.drawImage(raster, 0, 0);
  ctx.restore();

  drawAnnotations(ctx, session.objects, view,
                  mode === "annotate" ? session.selected : null);
  if (mode === "annotate") {
    const draft = session.draft();
    if (draft) drawBox(ctx, draft, view, "#ffd166", 2, true);
  } else {
    drawDetections(ctx, detections, view, queue ? queue.cursor : null);
  }
  renderCounts();
}

function renderCounts(): void {
  if (mode === "annotate") {
    const n = session ? session.objects.length : 0;
    const dirty = session?.dirty ? " — unsaved changes" : "";
    countsBar.textContent = `${n} annotation${n === 1 ? "" : "s"}${dirty}`;
    saveButton.disabled = !session?.dirty;
    return;
  }
  if (!queue || queue.isEmpty) {
    countsBar.textContent = "no detections — run detection or pick another image";
    return;
  }
  const c = queue.counts();
  const current = queue.current;
  const prob = current ? ` | current p=${formatProbability(current.probability)}` : "";
  countsBar.textContent =
    `confirmed ${c.confirmed} / rejected ${c.rejected} / pending ${c.pending}${prob}`;
}

// -- image handling -----------------------------------------------------------

async function openImage(summary: ImageSummary): Promise<void> {
  const doc = await api.getAnnotations(summary.id);
  session = new AnnotateSession(doc, models[0]?.target_label ?? "object");
  queue = null;
  detections = await api.getDetections(summary.id);
  if (mode === "review") queue = new ReviewQueue(detections);
  raster = new Image();
  raster.onload = () => {
    fitView();
    render();
  };
  raster.src = api.imageUrl(summary.id);
  status(`${summary.id} — ${summary.width}x${summary.height}`);
  for (const el of imageList.querySelectorAll("li")) {
    el.classList.toggle("active", el.dataset.id === summary.id);
  }
}

async function save(): Promise<void> {
  if (!session || !session.dirty) return;
  try {
    const response = await api.putAnnotations(session.imageId, session.payload());
    session.applyServer(response.version, response.objects);
    status("saved");
  } catch (error) {
    if (error instanceof ConflictError) {
      const reload = window.confirm(
        "Someone else changed these annotations. Reload the server copy " +
        "and merge your new boxes on top?",
      );
      if (reload) {
        const fresh = await api.getAnnotations(session.imageId);
        const outcome = session.mergeWithServer(fresh);
        status(`merged: kept ${outcome.kept} local box(es), ` +
               `${outcome.duplicates} already present — review and save again`);
      }
    } else {
      status(`save failed: ${(error as Error).message}`);
    }
  }
  render();
}

// -- detection jobs -------------------------------------------------------------

async function runDetection(): Promise<void> {
  if (!session) return;
  const modelId = modelSelect.value;
  if (!modelId) {
    status("no model registered on the server");
    return;
  }
  runButton.disabled = true;
  try {
    status("detection running…");
    const job = await api.submitDetect(session.imageId, modelId, {});
    const final = await api.waitForJob(job.id);
    if (final.status === "failed") {
      status(`detection failed: ${final.error ?? "unknown error"}`);
      return;
    }
    detections = await api.getDetections(session.imageId);
    queue = new ReviewQueue(detections);
    status(`detection done: ${detections.length} candidate(s)`);
  } catch (error) {
    status(`detection failed: ${(error as Error).message}`);
  } finally {
    runButton.disabled = false;
    render();
  }
}

async function postVerdict(index: number, verdict: "confirm" | "reject"): Promise<void> {
  if (!session || !queue) return;
  const det = queue.detections[index];
  try {
    await api.postReview({
      image_id: session.imageId,
      bbox: det.bbox,
      verdict,
      reviewer: "browser",
      timestamp: new Date().toISOString(),
    });
  } catch (error) {
    status(`verdict not recorded: ${(error as Error).message}`);
  }
}

// -- events ---------------------------------------------------------------------

canvas.addEventListener("mousedown", (event) => {
  if (event.shiftKey || event.button === 1) {
    panning = true;
    panStart = { x: event.clientX - view.panX, y: event.clientY - view.panY };
    return;
  }
  if (mode !== "annotate" || !session) return;
  const pt = toImage(canvasPoint(event), view);
  const tolerance = 6 / view.zoom;
  for (let i = session.objects.length - 1; i >= 0; i -= 1) {
    const zone = hitTest(session.objects[i].bbox, pt, tolerance);
    if (zone !== "none") {
      session.beginEdit(i, zone, pt);
      render();
      return;
    }
  }
  session.beginDraw(pt);
});

canvas.addEventListener("mousemove", (event) => {
  if (panning) {
    view = { ...view, panX: event.clientX - panStart.x, panY: event.clientY - panStart.y };
    render();
    return;
  }
  if (mode !== "annotate" || !session || !session.dragging) return;
  session.updateDrag(toImage(canvasPoint(event), view));
  render();
});

window.addEventListener("mouseup", () => {
  panning = false;
  if (mode !== "annotate" || !session || !session.dragging) return;
  session.commitDrag();
  render();
});

canvas.addEventListener("dblclick", (event) => {
  if (mode !== "annotate" || !session) return;
  const pt = toImage(canvasPoint(event), view);
  for (let i = session.objects.length - 1; i >= 0; i -= 1) {
    if (hitTest(session.objects[i].bbox, pt, 0) === "inside") {
      const label = window.prompt("Label", session.objects[i].label);
      if (label) session.setLabel(i, label);
      render();
      return;
    }
  }
});

canvas.addEventListener("wheel", (event) => {
  event.preventDefault();
  const factor = event.deltaY < 0 ? 1.25 : 0.8;
  const at = canvasPoint(event as MouseEvent);
  const before = toImage(at, view);
  const zoom = Math.min(Math.max(view.zoom * factor, 0.1), 32);
  view = {
    zoom,
    panX: at.x - before.x * zoom,
    panY: at.y - before.y * zoom,
  };
  render();
}, { passive: false });

window.addEventListener("keydown", (event) => {
  if (event.target instanceof HTMLInputElement) return;
  if (mode === "annotate" && session) {
    if (event.key === "Delete" || event.key === "Backspace") {
      session.deleteSelected();
      render();
    } else if (event.key === "s" && (event.ctrlKey || event.metaKey)) {
      event.preventDefault();
      void save();
    } else if (event.key === "Escape") {
      session.cancelDrag();
      session.selected = null;
      render();
    }
    return;
  }
  if (mode === "review" && queue) {
    const action = queue.handleKey(event.key);
    if (action) void postVerdict(action.index, action.verdict);
    render();
  }
});

function setMode(next: Mode): void {
  mode = next;
  annotateButton.classList.toggle("active", mode === "annotate");
  reviewButton.classList.toggle("active", mode === "review");
  runButton.style.display = mode === "review" ? "" : "none";
  saveButton.style.display = mode === "annotate" ? "" : "none";
  if (mode === "review" && queue === null) queue = new ReviewQueue(detections);
  render();
}

annotateButton.addEventListener("click", () => setMode("annotate"));
reviewButton.addEventListener("click", () => setMode("review"));
saveButton.addEventListener("click", () => void save());
runButton.addEventListener("click", () => void runDetection());

// -- boot -------------------------------------------------------------------------

async function boot(): Promise<void> {
  images = await api.listImages();
  models = await api.listModels();
  imageList.replaceChildren(...images.map((summary) => {
    const item = document.createElement("li");
    item.textContent = `${summary.id} (${summary.n_objects})`;
    item.dataset.id = summary.id;
    item.addEventListener("click", () => void openImage(summary));
    return item;
  }));
  modelSelect.replaceChildren(...models.map((model) => {
    const option = document.createElement("option");
    option.value = model.id;
    option.textContent = `${model.id} (${model.patch_size}px)`;
    return option;
  }));
  setMode("annotate");
  if (images.length > 0) await openImage(images[0]);
  else status("no images in the served corpus");
}

void boot();
