"""Synthetic "microscopy" corpus: bright noisy fields, dark blobs, decoys.

Each image gets a noisy bright background, a few dark ellipses at random
positions and orientations (annotated with tight boxes, label
"synthetic-pathogen"), and a few confounder shapes -- filled rectangles
and rings drawn from the same size and intensity ranges but never
annotated. Confounders are rendered first so a pathogen can occlude a
decoy but never the reverse.

Generation is deterministic: image i depends only on (seed, i), so
corpora are reproducible byte-for-byte and images can be produced in any
order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalidError
from .patches import AnnotatedImage, BoundingBox, derive_seed, save_manifest

__all__ = ["SynthConfig", "PATHOGEN_LABEL", "render_image", "generate",
           "write_corpus"]

PATHOGEN_LABEL = "synthetic-pathogen"


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 200
    image_size: int = 256
    objects_per_image: tuple = (2, 5)       # inclusive integer range
    object_axes: tuple = (6.0, 14.0)        # ellipse semi-axes, px
    object_intensity: tuple = (30.0, 90.0)  # fill value, 0-255
    confounders_per_image: tuple = (2, 6)   # inclusive integer range
    background_level: float = 200.0
    background_noise_std: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 1:
            raise ConfigInvalidError("n_images must be >= 1")
        if self.image_size < 32:
            raise ConfigInvalidError("image_size must be >= 32")
        for name in ("objects_per_image", "object_axes", "object_intensity",
                     "confounders_per_image"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigInvalidError(f"{name} range ({lo}, {hi}) inverted")
        if self.objects_per_image[0] < 0 or self.confounders_per_image[0] < 0:
            raise ConfigInvalidError("shape counts cannot be negative")
        if self.object_axes[0] < 2:
            raise ConfigInvalidError("object_axes must start at >= 2 px")
        if 2 * self.object_axes[1] + 8 > self.image_size:
            raise ConfigInvalidError("object_axes too large for image_size")
        if not (0 <= self.object_intensity[0] and self.object_intensity[1] <= 255):
            raise ConfigInvalidError("object_intensity outside [0, 255]")
        if self.background_noise_std < 0:
            raise ConfigInvalidError("background_noise_std must be >= 0")
        if not 0 <= self.background_level <= 255:
            raise ConfigInvalidError("background_level outside [0, 255]")

    def to_dict(self) -> dict:
        return {
            "n_images": self.n_images,
            "image_size": self.image_size,
            "objects_per_image": list(self.objects_per_image),
            "object_axes": list(self.object_axes),
            "object_intensity": list(self.object_intensity),
            "confounders_per_image": list(self.confounders_per_image),
            "background_level": self.background_level,
            "background_noise_std": self.background_noise_std,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for name in ("objects_per_image", "object_axes", "object_intensity",
                     "confounders_per_image"):
            if name in d:
                d[name] = tuple(d[name])
        return cls(**d)


def _ellipse_mask(xx, yy, cx, cy, a, b, theta):
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _rect_mask(xx, yy, cx, cy, a, b, theta):
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (np.abs(u) <= a) & (np.abs(v) <= b)


def _ring_mask(xx, yy, cx, cy, a, b, theta):
    outer = _ellipse_mask(xx, yy, cx, cy, a, a, 0.0)
    inner = _ellipse_mask(xx, yy, cx, cy, 0.6 * a, 0.6 * a, 0.0)
    return outer & ~inner


def _paint(pixels, mask, fill, rng):
    n = int(mask.sum())
    values = fill + rng.normal(0.0, 2.0, size=(n, 3))
    pixels[mask] = values


def _place(rng, cfg):
    a = rng.uniform(*cfg.object_axes)
    b = rng.uniform(*cfg.object_axes)
    theta = rng.uniform(0.0, np.pi)
    margin = float(np.ceil(max(a, b))) + 2.0
    cx = rng.uniform(margin, cfg.image_size - margin)
    cy = rng.uniform(margin, cfg.image_size - margin)
    return cx, cy, a, b, theta


def render_image(cfg: SynthConfig, index: int):
    """One deterministic image; returns (AnnotatedImage, pathogen_masks)."""
    rng = np.random.default_rng(derive_seed(cfg.seed, f"image:{index}"))
    size = cfg.image_size
    pixels = np.full((size, size, 3), cfg.background_level, dtype=np.float64)
    pixels += rng.normal(0.0, cfg.background_noise_std, size=pixels.shape)
    yy, xx = np.mgrid[0:size, 0:size]

    n_conf = int(rng.integers(cfg.confounders_per_image[0],
                              cfg.confounders_per_image[1] + 1))
    for _ in range(n_conf):
        cx, cy, a, b, theta = _place(rng, cfg)
        fill = rng.uniform(*cfg.object_intensity)
        shape = _rect_mask if rng.random() < 0.5 else _ring_mask
        _paint(pixels, shape(xx, yy, cx, cy, a, b, theta), fill, rng)

    n_obj = int(rng.integers(cfg.objects_per_image[0],
                             cfg.objects_per_image[1] + 1))
    boxes, masks = [], []
    for _ in range(n_obj):
        # try to keep pathogen boxes from stacking on one another
        for _attempt in range(50):
            cx, cy, a, b, theta = _place(rng, cfg)
            mask = _ellipse_mask(xx, yy, cx, cy, a, b, theta)
            ys, xs = np.nonzero(mask)
            box = BoundingBox(int(xs.min()), int(ys.min()),
                              int(xs.max()) + 1, int(ys.max()) + 1,
                              PATHOGEN_LABEL)
            crowded = any(
                box.intersects_window(other.x_min, other.y_min,
                                      max(other.width, other.height))
                for other in boxes
            )
            if not crowded:
                break
        fill = rng.uniform(*cfg.object_intensity)
        _paint(pixels, mask, fill, rng)
        boxes.append(box)
        masks.append(mask)

    raster = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)
    image = AnnotatedImage(id=f"synth-{index:04d}", pixels=raster, boxes=boxes)
    return image, masks


def generate(cfg: SynthConfig):
    """The full corpus as in-memory annotated images."""
    return [render_image(cfg, i)[0] for i in range(cfg.n_images)]


def write_corpus(cfg: SynthConfig, directory):
    """Generate and persist the corpus; returns the manifest path."""
    return save_manifest(generate(cfg), directory)
