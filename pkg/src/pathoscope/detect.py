"""Whole-image localization: dense window scoring plus non-max suppression.

score_image slides a patch-sized window over the raster it is given (one
score per stride step), detect() wraps the full pipeline -- downsample,
score, threshold, suppress -- and reports surviving boxes in original
image coordinates. Greedy NMS keeps the highest-probability candidate and
drops everything overlapping it beyond an IoU threshold, repeating until
no candidates remain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import ConfigInvalidError, ImageTooSmallError, NonFiniteTensorError
from .model import TrainedModel, predict_batch
from .patches import AnnotatedImage, BoundingBox, PatchSpec, downsample

__all__ = [
    "Candidate",
    "DetectorConfig",
    "Detection",
    "MatchResult",
    "iou",
    "window_origins",
    "score_image",
    "non_max_suppression",
    "detect",
    "match_detections",
    "save_detections_jsonl",
    "load_detections_jsonl",
    "render_overlay",
]

SCORING_CHUNK = 512  # windows per forward pass; bounds peak memory


@dataclass(frozen=True)
class Candidate:
    box: BoundingBox
    probability: float


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    probability: float


@dataclass(frozen=True)
class DetectorConfig:
    """stride None means patch_size // 4, the default scanning density."""

    stride: int | None = None
    probability_threshold: float = 0.5
    overlap_threshold: float = 0.3

    def __post_init__(self):
        if self.stride is not None and self.stride < 1:
            raise ConfigInvalidError("stride must be >= 1")
        if not 0.0 <= self.probability_threshold <= 1.0:
            raise ConfigInvalidError("probability_threshold outside [0, 1]")
        if not 0.0 < self.overlap_threshold < 1.0:
            raise ConfigInvalidError("overlap_threshold outside (0, 1)")

    def resolved_stride(self, patch_size: int) -> int:
        return self.stride if self.stride is not None else max(1, patch_size // 4)


@dataclass
class MatchResult:
    true_positives: int
    false_positives: int
    false_negatives: int
    pairs: list  # (detection index, truth index)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.width * a.height + b.width * b.height - inter
    return inter / union


def window_origins(height: int, width: int, patch_size: int, stride: int):
    """Top-left (x, y) of every scored window, row-major scan order."""
    ys = range(0, height - patch_size + 1, stride)
    xs = range(0, width - patch_size + 1, stride)
    return [(x, y) for y in ys for x in xs]


def score_image(model: TrainedModel, image: AnnotatedImage, spec: PatchSpec,
                cfg: DetectorConfig):
    """Score every window of the given raster; keep those above threshold.

    The image is used as passed in -- no downsampling happens here. Window
    coordinates are therefore in this raster's coordinate system.
    """
    p = spec.patch_size
    if image.height < p or image.width < p:
        raise ImageTooSmallError(
            f"image {image.id!r} is {image.width}x{image.height}, needs {p}"
        )
    stride = cfg.resolved_stride(p)
    origins = window_origins(image.height, image.width, p, stride)
    pixels = (image.pixels.astype(np.float32) / 255.0).clip(0.0, 1.0)

    candidates = []
    for start in range(0, len(origins), SCORING_CHUNK):
        chunk = origins[start:start + SCORING_CHUNK]
        windows = np.stack([pixels[y:y + p, x:x + p, :] for x, y in chunk])
        probs = predict_batch(model, windows)
        if not np.all(np.isfinite(probs)):
            raise NonFiniteTensorError("model produced non-finite probabilities")
        for (x, y), prob in zip(chunk, probs):
            if prob >= cfg.probability_threshold:
                candidates.append(Candidate(
                    box=BoundingBox(x, y, x + p, y + p, spec.target_label),
                    probability=float(prob),
                ))
    return candidates


def non_max_suppression(candidates, overlap_threshold: float):
    """Greedy suppression: best probability wins, overlaps above IoU die.

    Ties are broken toward lower y, then lower x, then earlier input
    position, so the result never depends on incidental list order.
    The survivor check runs vectorized against all kept boxes; integer
    coordinates are exact in float64, so this matches pairwise iou().
    """
    for c in candidates:
        if not np.isfinite(c.probability):
            raise NonFiniteTensorError("candidate probability is not finite")
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-candidates[i].probability,
                       candidates[i].box.y_min, candidates[i].box.x_min, i),
    )
    boxes = np.array(
        [[c.box.x_min, c.box.y_min, c.box.x_max, c.box.y_max]
         for c in candidates], dtype=np.float64,
    ).reshape(len(candidates), 4)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    kept = []
    kept_rows = []
    for i in order:
        if kept_rows:
            k = np.array(kept_rows)
            iw = np.minimum(k[:, 2], boxes[i, 2]) - np.maximum(k[:, 0], boxes[i, 0])
            ih = np.minimum(k[:, 3], boxes[i, 3]) - np.maximum(k[:, 1], boxes[i, 1])
            inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
            union = k[:, 4] + areas[i] - inter
            if np.any(inter / union > overlap_threshold):
                continue
        c = candidates[i]
        kept.append(Detection(box=c.box, probability=c.probability))
        kept_rows.append([*boxes[i], areas[i]])
    return kept


def detect(model: TrainedModel, image: AnnotatedImage, spec: PatchSpec,
           cfg: DetectorConfig):
    """Full pipeline on an original-resolution image.

    Output boxes are rescaled back to original coordinates, so a factor-2
    spec yields even-aligned boxes of side 2 * patch_size.
    """
    small = downsample(image, spec.downsample_factor, min_size=spec.patch_size)
    candidates = score_image(model, small, spec, cfg)
    kept = non_max_suppression(candidates, cfg.overlap_threshold)
    f = spec.downsample_factor
    h, w = image.height, image.width
    return [
        Detection(
            box=BoundingBox(d.box.x_min * f, d.box.y_min * f,
                            min(d.box.x_max * f, w), min(d.box.y_max * f, h),
                            d.box.label),
            probability=d.probability,
        )
        for d in kept
    ]


def match_detections(detections, truth_boxes) -> MatchResult:
    """One-to-one greedy matching in descending detection probability.

    A detection claims an unmatched truth box if its center falls inside
    the box or their IoU is >= 0.5; among several eligible boxes it takes
    the highest-IoU one. Unclaimed detections are false positives,
    unclaimed truths false negatives.
    """
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].probability, i))
    taken = [False] * len(truth_boxes)
    pairs = []
    for i in order:
        d = detections[i]
        cx = (d.box.x_min + d.box.x_max) / 2.0
        cy = (d.box.y_min + d.box.y_max) / 2.0
        best_j, best_iou = -1, -1.0
        for j, t in enumerate(truth_boxes):
            if taken[j]:
                continue
            overlap = iou(d.box, t)
            center_in = (t.x_min <= cx < t.x_max) and (t.y_min <= cy < t.y_max)
            if (center_in or overlap >= 0.5) and overlap > best_iou:
                best_j, best_iou = j, overlap
        if best_j >= 0:
            taken[best_j] = True
            pairs.append((i, best_j))
    tp = len(pairs)
    return MatchResult(
        true_positives=tp,
        false_positives=len(detections) - tp,
        false_negatives=len(truth_boxes) - tp,
        pairs=sorted(pairs),
    )


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def save_detections_jsonl(detections_by_image: dict, path) -> None:
    """One JSON object per line: {image_id, bbox, probability}."""
    lines = []
    for image_id in sorted(detections_by_image):
        for d in detections_by_image[image_id]:
            lines.append(json.dumps({
                "image_id": image_id,
                "bbox": d.box.to_list(),
                "probability": d.probability,
            }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_detections_jsonl(path, label: str = "detection") -> dict:
    out: dict = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        box = BoundingBox(*rec["bbox"], label=label)
        out.setdefault(rec["image_id"], []).append(
            Detection(box=box, probability=float(rec["probability"]))
        )
    return out


def render_overlay(image: AnnotatedImage, detections, path=None) -> np.ndarray:
    """Truth boxes in white, detections in red, on the original raster."""
    raster = np.clip(np.rint(image.pixels), 0, 255).astype(np.uint8)
    canvas = Image.fromarray(raster, mode="RGB")
    draw = ImageDraw.Draw(canvas)
    for box in image.boxes:
        draw.rectangle([box.x_min, box.y_min, box.x_max - 1, box.y_max - 1],
                       outline=(255, 255, 255), width=2)
    for d in detections:
        draw.rectangle([d.box.x_min, d.box.y_min, d.box.x_max - 1, d.box.y_max - 1],
                       outline=(255, 0, 0), width=2)
    out = np.asarray(canvas)
    if path is not None:
        canvas.save(path)
    return out
