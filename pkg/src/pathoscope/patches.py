"""Turn annotated whole images into balanced, augmented, split patch sets.

The pipeline is: downsample each image by an integer box filter, cut one
positive patch centered on every annotated box of the target class, sample
negative windows that touch no annotation at all, discard surplus negatives
down to a cap of 100x the positive count, then expand each positive into
its 8 dihedral transforms. Everything is a deterministic function of
(corpus, spec, seed); per-image randomness is seeded from a stable hash of
(seed, image id) so results do not depend on iteration order.

Also owns the two on-disk formats: the JSON annotation manifest and the
binary patch cache.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    ConfigInvalidError,
    CorpusTooSmallError,
    FactorTooLargeError,
    ImageTooSmallError,
    NoPositivesError,
    NotSquareError,
    SamplingExhaustedError,
    TruncatedFileError,
    VersionUnsupportedError,
)

__all__ = [
    "BoundingBox",
    "AnnotatedImage",
    "PatchSpec",
    "Patch",
    "DatasetSplit",
    "derive_seed",
    "downsample",
    "extract_positive_patches",
    "sample_negative_patches",
    "balance",
    "augment",
    "apply_dihedral",
    "split_50_50",
    "build_patches",
    "load_manifest",
    "save_manifest",
    "save_patch_cache",
    "load_patch_cache",
    "split_fingerprint",
]

MANIFEST_VERSION = 1
CACHE_MAGIC = b"PSPC"
CACHE_VERSION = 1


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates, inclusive-exclusive."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    label: str

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ConfigInvalidError(
                f"degenerate box [{self.x_min},{self.y_min},{self.x_max},{self.y_max}]"
            )
        if self.x_min < 0 or self.y_min < 0:
            raise ConfigInvalidError("box extends past the raster origin")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    def center(self):
        return (self.x_min + self.x_max) // 2, (self.y_min + self.y_max) // 2

    def intersects_window(self, x: int, y: int, size: int) -> bool:
        """True if the size x size window at (x, y) overlaps this box by >= 1 px."""
        return (x < self.x_max and self.x_min < x + size
                and y < self.y_max and self.y_min < y + size)

    def to_list(self):
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass
class AnnotatedImage:
    """A decoded raster plus its expert boxes.

    Pixels are H x W x 3; uint8 as ingested, float32 after downsampling
    (a box-filter mean is generally fractional). Values stay in [0, 255].
    """

    id: str
    pixels: np.ndarray
    boxes: list

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ConfigInvalidError(f"image {self.id!r} is not H x W x 3")
        h, w = self.pixels.shape[:2]
        for box in self.boxes:
            if box.x_max > w or box.y_max > h:
                raise ConfigInvalidError(
                    f"box {box.to_list()} outside {w}x{h} raster of {self.id!r}"
                )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class PatchSpec:
    """Patch-generation parameters; per-pathogen values are configuration.

    negatives_per_image fixes how many negative windows to draw from each
    image before the cap is applied; tune it to the corpus density.
    """

    downsample_factor: int = 2
    patch_size: int = 32
    stride: int = 8
    neg_cap_ratio: int = 100
    target_label: str = "synthetic-pathogen"
    negatives_per_image: int = 50

    def __post_init__(self):
        if self.downsample_factor < 1:
            raise ConfigInvalidError("downsample_factor must be >= 1")
        if self.patch_size < 2:
            raise ConfigInvalidError("patch_size must be >= 2")
        if self.stride < 1:
            raise ConfigInvalidError("stride must be >= 1")
        if self.neg_cap_ratio < 1:
            raise ConfigInvalidError("neg_cap_ratio must be >= 1")
        if self.negatives_per_image < 0:
            raise ConfigInvalidError("negatives_per_image must be >= 0")

    def to_dict(self) -> dict:
        return {
            "downsample_factor": self.downsample_factor,
            "patch_size": self.patch_size,
            "stride": self.stride,
            "neg_cap_ratio": self.neg_cap_ratio,
            "target_label": self.target_label,
            "negatives_per_image": self.negatives_per_image,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatchSpec":
        return cls(**d)


@dataclass
class Patch:
    """A square normalized sub-image with a binary label.

    label is 1 for positive (contains the target pathogen class), 0 for
    negative. transform_id 0 is the untransformed original; 1-7 are the
    other dihedral-group elements.
    """

    pixels: np.ndarray  # (p, p, 3) float32 in [0, 1]
    label: int
    source_image_id: str
    origin: tuple  # (x, y) top-left in downsampled coordinates
    transform_id: int = 0


@dataclass
class DatasetSplit:
    train: list
    test: list
    seed: int
    stats: dict = field(default_factory=dict)


def derive_seed(global_seed: int, tag: str) -> int:
    """Stable 63-bit seed from (global seed, tag); independent of PYTHONHASHSEED."""
    digest = hashlib.sha256(f"{global_seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# core operations
# ---------------------------------------------------------------------------

def downsample(image: AnnotatedImage, factor: int,
               min_size: int | None = None) -> AnnotatedImage:
    """Box-filter (mean) reduction by an integer factor in each dimension.

    Boxes are rescaled with floor/ceil so they still cover their object.
    Trailing rows/columns that do not fill a block are dropped; a box that
    lies entirely inside that dropped fringe vanishes with it.
    """
    if factor < 1:
        raise ConfigInvalidError("downsample factor must be >= 1")
    if factor == 1:
        return image
    h, w = image.pixels.shape[:2]
    nh, nw = h // factor, w // factor
    if nh < 1 or nw < 1 or (min_size is not None and (nh < min_size or nw < min_size)):
        raise FactorTooLargeError(
            f"factor {factor} reduces {w}x{h} below the required size"
        )
    cropped = image.pixels[: nh * factor, : nw * factor, :].astype(np.float32)
    reduced = cropped.reshape(nh, factor, nw, factor, 3).mean(axis=(1, 3))

    boxes = []
    for box in image.boxes:
        x_min = box.x_min // factor
        y_min = box.y_min // factor
        x_max = min(-(-box.x_max // factor), nw)
        y_max = min(-(-box.y_max // factor), nh)
        if x_min < x_max and y_min < y_max:
            boxes.append(BoundingBox(x_min, y_min, x_max, y_max, box.label))
    return AnnotatedImage(id=image.id, pixels=reduced, boxes=boxes)


def _cut(image: AnnotatedImage, x: int, y: int, size: int) -> np.ndarray:
    window = image.pixels[y:y + size, x:x + size, :]
    return (window.astype(np.float32) / 255.0).clip(0.0, 1.0)


def extract_positive_patches(image: AnnotatedImage, spec: PatchSpec):
    """One patch per target-class box, centered on the box center.

    Boxes whose centered window would leave the raster are skipped rather
    than padded. Returns (patches, skipped_count).
    """
    p = spec.patch_size
    patches, skipped = [], 0
    for box in image.boxes:
        if box.label != spec.target_label:
            continue
        cx, cy = box.center()
        x0, y0 = cx - p // 2, cy - p // 2
        if x0 < 0 or y0 < 0 or x0 + p > image.width or y0 + p > image.height:
            skipped += 1
            continue
        patches.append(Patch(
            pixels=_cut(image, x0, y0, p),
            label=1,
            source_image_id=image.id,
            origin=(x0, y0),
        ))
    return patches, skipped


def sample_negative_patches(image: AnnotatedImage, spec: PatchSpec,
                            count: int, seed: int):
    """Uniformly random windows that overlap no annotated box of any class.

    Deterministic given the seed. Raises SamplingExhausted once 1000*count
    candidates have been rejected (the image is saturated with objects).
    """
    p = spec.patch_size
    if image.width < p or image.height < p:
        raise ImageTooSmallError(
            f"image {image.id!r} is {image.width}x{image.height}, patch needs {p}"
        )
    if count == 0:
        return []
    rng = np.random.default_rng(seed)
    max_rejections = 1000 * count
    patches, rejected = [], 0
    while len(patches) < count:
        x = int(rng.integers(0, image.width - p + 1))
        y = int(rng.integers(0, image.height - p + 1))
        if any(box.intersects_window(x, y, p) for box in image.boxes):
            rejected += 1
            if rejected >= max_rejections:
                raise SamplingExhaustedError(
                    f"{rejected} rejected windows in {image.id!r}; "
                    f"kept {len(patches)} of {count}"
                )
            continue
        patches.append(Patch(
            pixels=_cut(image, x, y, p),
            label=0,
            source_image_id=image.id,
            origin=(x, y),
        ))
    return patches


def balance(positives: list, negatives: list, cap_ratio: int, seed: int):
    """Random subsample of negatives down to cap_ratio * len(positives).

    The cap counts original (pre-augmentation) positives. Returns the kept
    negatives; under the cap, all of them (original order).
    """
    if not positives:
        raise NoPositivesError("cannot balance against an empty positive set")
    cap = cap_ratio * len(positives)
    if len(negatives) <= cap:
        return list(negatives)
    rng = np.random.default_rng(seed)
    keep = rng.choice(len(negatives), size=cap, replace=False)
    keep.sort()
    return [negatives[i] for i in keep]


def apply_dihedral(pixels: np.ndarray, transform_id: int) -> np.ndarray:
    """One of the 8 square-symmetry transforms; id 0 is the identity.

    ids 0-3 rotate counterclockwise by 90 * id degrees; ids 4-7 mirror
    horizontally first, then rotate by 90 * (id - 4).
    """
    if pixels.shape[0] != pixels.shape[1]:
        raise NotSquareError(f"patch is {pixels.shape[0]}x{pixels.shape[1]}")
    if not 0 <= transform_id < 8:
        raise ConfigInvalidError(f"transform_id {transform_id} outside 0-7")
    out = pixels
    if transform_id >= 4:
        out = np.fliplr(out)
    return np.ascontiguousarray(np.rot90(out, transform_id % 4, axes=(0, 1)))


def augment(patch: Patch):
    """All 8 dihedral transforms of a patch; element 0 is the original."""
    return [
        replace(patch, pixels=apply_dihedral(patch.pixels, t), transform_id=t)
        for t in range(8)
    ]


# ---------------------------------------------------------------------------
# the full pipeline
# ---------------------------------------------------------------------------

def build_patches(images, spec: PatchSpec, seed: int):
    """Run the per-partition pipeline over a set of images.

    Collects positives and negatives per image, caps negatives against the
    pre-augmentation positive count, then expands positives dihedrally.
    Returns (patches, stats).
    """
    positives, negatives = [], []
    skipped = 0
    for image in sorted(images, key=lambda im: im.id):
        small = downsample(image, spec.downsample_factor, min_size=spec.patch_size)
        pos, skip = extract_positive_patches(small, spec)
        positives.extend(pos)
        skipped += skip
        negatives.extend(sample_negative_patches(
            small, spec, spec.negatives_per_image,
            derive_seed(seed, f"neg:{image.id}"),
        ))
    if not positives:
        raise NoPositivesError("no positive patches could be extracted")
    kept = balance(positives, negatives, spec.neg_cap_ratio,
                   derive_seed(seed, "balance"))
    augmented = [t for p in positives for t in augment(p)]
    stats = {
        "original_positives": len(positives),
        "augmented_positives": len(augmented),
        "sampled_negatives": len(negatives),
        "kept_negatives": len(kept),
        "skipped_positives": skipped,
    }
    return augmented + kept, stats


def split_50_50(corpus, spec: PatchSpec, seed: int,
                mode: str = "image") -> DatasetSplit:
    """Shuffle the corpus by seed and split it in half, then build patches.

    mode "image" (default) partitions by source image, so no transformed
    copy of one object can land on both sides. mode "patch" keeps the
    pooled order: augment and cap over the whole corpus first, then split
    at patch granularity, stratified by label so the class ratio survives
    the split exactly.
    """
    if len(corpus) < 2:
        raise CorpusTooSmallError(f"need >= 2 images, got {len(corpus)}")
    if mode not in ("image", "patch"):
        raise ConfigInvalidError(f"unknown split mode {mode!r}")
    # canonical order first, so the outcome depends on ids, not list order
    corpus = sorted(corpus, key=lambda im: im.id)
    rng = np.random.default_rng(derive_seed(seed, "split"))
    order = rng.permutation(len(corpus))

    if mode == "image":
        half = math.ceil(len(corpus) / 2)
        train_images = [corpus[i] for i in order[:half]]
        test_images = [corpus[i] for i in order[half:]]
        train, train_stats = build_patches(train_images, spec,
                                           derive_seed(seed, "train"))
        test, test_stats = build_patches(test_images, spec,
                                         derive_seed(seed, "test"))
        stats = {"mode": "image", "train": train_stats, "test": test_stats}
        return DatasetSplit(train=train, test=test, seed=seed, stats=stats)

    # patch mode: one pooled pipeline run, then a stratified patch-level
    # shuffle. Halving positives and negatives separately keeps the test
    # fraction at the composition the cap guarantees; augmented positives
    # come in multiples of 8, so the halves still land on ceil/floor.
    shuffled = [corpus[i] for i in order]
    patches, stats = build_patches(shuffled, spec, derive_seed(seed, "all"))
    split_rng = np.random.default_rng(derive_seed(seed, "patch-split"))
    train_idx: list = []
    test_idx: list = []
    for label in (1, 0):
        members = [i for i, p in enumerate(patches) if p.label == label]
        perm = split_rng.permutation(len(members))
        half = math.ceil(len(members) / 2)
        train_idx.extend(members[i] for i in perm[:half])
        test_idx.extend(members[i] for i in perm[half:])
    train = [patches[int(i)] for i in split_rng.permutation(train_idx)]
    test = [patches[int(i)] for i in split_rng.permutation(test_idx)]
    return DatasetSplit(train=train, test=test, seed=seed,
                        stats={"mode": "patch", "all": stats})


# ---------------------------------------------------------------------------
# annotation manifest (JSON + image files)
# ---------------------------------------------------------------------------

def manifest_entry(image: AnnotatedImage, file_name: str) -> dict:
    return {
        "id": image.id,
        "file": file_name,
        "width": image.width,
        "height": image.height,
        "objects": [
            {"label": b.label, "bbox": b.to_list()} for b in image.boxes
        ],
    }


def save_manifest(images, directory, image_files=None) -> Path:
    """Write PNGs plus manifest.json into directory; returns the manifest path.

    image_files maps image id to an existing relative file name; images not
    in the map are encoded to '<id>.png'.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    image_files = image_files or {}
    entries = []
    for image in images:
        name = image_files.get(image.id)
        if name is None:
            name = f"{image.id}.png"
            raster = np.clip(np.rint(image.pixels), 0, 255).astype(np.uint8)
            Image.fromarray(raster, mode="RGB").save(directory / name)
        entries.append(manifest_entry(image, name))
    manifest = {"version": MANIFEST_VERSION, "images": entries}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_manifest(manifest_path) -> list:
    """Read a manifest and decode every referenced image into memory."""
    manifest_path = Path(manifest_path)
    data = json.loads(manifest_path.read_text())
    if data.get("version") != MANIFEST_VERSION:
        raise VersionUnsupportedError(
            f"manifest version {data.get('version')!r} unsupported"
        )
    images = []
    for entry in data["images"]:
        file_path = manifest_path.parent / entry["file"]
        with Image.open(file_path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        if pixels.shape[:2] != (entry["height"], entry["width"]):
            raise ConfigInvalidError(
                f"{entry['id']}: file is {pixels.shape[1]}x{pixels.shape[0]}, "
                f"manifest says {entry['width']}x{entry['height']}"
            )
        boxes = [
            BoundingBox(*obj["bbox"], label=obj["label"])
            for obj in entry["objects"]
        ]
        images.append(AnnotatedImage(id=entry["id"], pixels=pixels, boxes=boxes))
    return images


# ---------------------------------------------------------------------------
# patch cache: little-endian binary with a JSON header
# ---------------------------------------------------------------------------
# Layout: magic "PSPC" | u32 version | u32 header_len | header JSON (utf-8)
#         | u64 body_len | body | u32 crc32(body)
# The body is the train then test patch tensors as raw float32 LE, each
# patch (p, p, 3) row-major. Per-patch metadata lives in the header.

def _side_meta(patches):
    return {
        "labels": [p.label for p in patches],
        "source_ids": [p.source_image_id for p in patches],
        "origins": [list(p.origin) for p in patches],
        "transforms": [p.transform_id for p in patches],
    }


def save_patch_cache(split: DatasetSplit, spec: PatchSpec, path) -> None:
    header = {
        "spec": spec.to_dict(),
        "seed": split.seed,
        "stats": split.stats,
        "train": _side_meta(split.train),
        "test": _side_meta(split.test),
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode()
    chunks = [np.ascontiguousarray(p.pixels, dtype="<f4").tobytes()
              for p in split.train + split.test]
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", CACHE_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<Q", len(body)))
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"file ends inside {what}")
    return data


def load_patch_cache(path):
    """Read a patch cache; returns (DatasetSplit, PatchSpec)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != CACHE_MAGIC:
            raise BadMagicError("not a patch cache file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CACHE_VERSION:
            raise VersionUnsupportedError(f"patch cache version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        header = json.loads(_read_exact(fh, header_len, "header"))
        (body_len,) = struct.unpack("<Q", _read_exact(fh, 8, "body length"))
        body = _read_exact(fh, body_len, "patch data")
        (crc,) = struct.unpack("<I", _read_exact(fh, 4, "checksum"))
    if zlib.crc32(body) != crc:
        raise ChecksumMismatchError("patch data fails its checksum")

    spec = PatchSpec.from_dict(header["spec"])
    p = spec.patch_size
    patch_bytes = p * p * 3 * 4
    n_train = len(header["train"]["labels"])
    n_test = len(header["test"]["labels"])
    if body_len != (n_train + n_test) * patch_bytes:
        raise TruncatedFileError("body length disagrees with header counts")

    def side(meta, start):
        out = []
        for i in range(len(meta["labels"])):
            offset = (start + i) * patch_bytes
            pixels = np.frombuffer(
                body, dtype="<f4", count=p * p * 3, offset=offset
            ).reshape(p, p, 3).copy()
            out.append(Patch(
                pixels=pixels,
                label=int(meta["labels"][i]),
                source_image_id=meta["source_ids"][i],
                origin=tuple(meta["origins"][i]),
                transform_id=int(meta["transforms"][i]),
            ))
        return out

    split = DatasetSplit(
        train=side(header["train"], 0),
        test=side(header["test"], n_train),
        seed=int(header["seed"]),
        stats=header.get("stats", {}),
    )
    return split, spec


def split_fingerprint(split: DatasetSplit) -> str:
    """Content hash of a split, used as training provenance."""
    h = hashlib.sha256()
    for side in (split.train, split.test):
        h.update(struct.pack("<Q", len(side)))
        for patch in side:
            h.update(bytes([patch.label, patch.transform_id]))
            h.update(np.ascontiguousarray(patch.pixels, dtype="<f4").tobytes())
    return h.hexdigest()
