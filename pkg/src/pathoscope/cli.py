"""Command-line workbench: every pipeline stage as a subcommand.

    pathoscope synth           --out corpus/
    pathoscope build-patches   --corpus corpus/manifest.json --out patches.pspc
    pathoscope train           --patches patches.pspc --out model.pscn
    pathoscope evaluate        --patches patches.pspc --model model.pscn --out eval/
    pathoscope detect          --model model.pscn --corpus corpus/manifest.json --out det.jsonl
    pathoscope export-overlays --corpus corpus/manifest.json --detections det.jsonl --out overlays/
    pathoscope serve           --data-dir workdir/

Every command takes --seed where randomness exists and --config FILE with
one `key = value` per line (flags win over the file). Relative paths
resolve under $PATHOSCOPE_DATA_DIR when that is set. Each command drops a
run manifest (run.json next to its artifacts) recording the exact config,
its hash, format versions, and the SHA-256 of every artifact written --
and no timestamps, so identical inputs give identical bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .detect import (
    DetectorConfig,
    detect,
    load_detections_jsonl,
    render_overlay,
    save_detections_jsonl,
)
from .errors import ConfigInvalidError, PathoscopeError
from .evaluate import (
    ExtraTreesConfig,
    ScoredSet,
    compare_methods,
    extra_trees_predict,
    extra_trees_train,
    feature_matrix,
    save_pr_csv,
    save_roc_csv,
    save_summary_csv,
)
from .model import (
    MODEL_VERSION,
    TrainConfig,
    build_network,
    load_model,
    predict_batch,
    save_loss_log,
    save_model,
    train,
)
from .patches import (
    CACHE_VERSION,
    MANIFEST_VERSION,
    PatchSpec,
    load_manifest,
    load_patch_cache,
    save_patch_cache,
    split_50_50,
)
from .synth import SynthConfig, write_corpus

__all__ = ["main"]


def _resolve(path: str) -> Path:
    base = os.environ.get("PATHOSCOPE_DATA_DIR")
    p = Path(path)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def read_config_file(path: Path) -> dict:
    """`key = value` lines; values are JSON where they parse, else strings."""
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalidError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _merge_config(args, names, config_flag="config"):
    """File values overridden by explicitly-passed flags, keyed by `names`."""
    merged = {}
    path = getattr(args, config_flag, None)
    if path:
        file_values = read_config_file(_resolve(path))
        unknown = set(file_values) - set(names)
        if unknown:
            raise ConfigInvalidError(
                f"unknown config keys: {', '.join(sorted(unknown))}"
            )
        merged.update(file_values)
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return merged


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_run_manifest(directory: Path, command: str, config: dict,
                       artifacts) -> Path:
    """<command>.run.json: what ran, with what, producing which bytes."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    record = {
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "versions": {
            "pathoscope": __version__,
            "manifest_format": MANIFEST_VERSION,
            "patch_cache_format": CACHE_VERSION,
            "model_format": MODEL_VERSION,
        },
        "artifacts": {
            name: _sha256(path) for name, path in sorted(artifacts.items())
        },
    }
    path = directory / f"{command}.run.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def _load_cache(path: Path):
    try:
        return load_patch_cache(path)
    except PathoscopeError as exc:
        raise type(exc)(f"patch cache {path}: {exc}") from exc


def _load_model_file(path: Path):
    try:
        return load_model(path)
    except PathoscopeError as exc:
        raise type(exc)(f"model {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

SYNTH_KEYS = ("n_images", "image_size", "objects_per_image", "object_axes",
              "object_intensity", "confounders_per_image", "background_level",
              "background_noise_std", "seed")


def cmd_synth(args) -> int:
    values = _merge_config(args, SYNTH_KEYS)
    for key in ("objects_per_image", "object_axes", "object_intensity",
                "confounders_per_image"):
        if key in values:
            values[key] = tuple(values[key])
    cfg = SynthConfig(**values)
    out = _resolve(args.out)
    manifest = write_corpus(cfg, out)
    artifacts = {"manifest.json": manifest}
    for entry in json.loads(manifest.read_text())["images"]:
        artifacts[entry["file"]] = out / entry["file"]
    write_run_manifest(out, "synth", cfg.to_dict(), artifacts)
    print(f"wrote {cfg.n_images} images to {out}")
    return 0


PATCH_KEYS = ("downsample_factor", "patch_size", "stride", "neg_cap_ratio",
              "target_label", "negatives_per_image")


def cmd_build_patches(args) -> int:
    values = _merge_config(args, PATCH_KEYS)
    spec = PatchSpec(**values)
    corpus = _resolve(args.corpus)
    if not corpus.exists():
        raise ConfigInvalidError(f"corpus manifest not found: {corpus}")
    images = load_manifest(corpus)
    split = split_50_50(images, spec, seed=args.seed, mode=args.mode)
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_patch_cache(split, spec, out)
    config = {"spec": spec.to_dict(), "seed": args.seed, "mode": args.mode,
              "corpus": corpus.name}
    write_run_manifest(out.parent, "build-patches", config, {out.name: out})
    print(f"wrote {len(split.train)} train / {len(split.test)} test patches "
          f"to {out}")
    return 0


TRAIN_KEYS = ("epochs", "learning_rate", "momentum", "batch_size", "seed")


def cmd_train(args) -> int:
    patches_path = _resolve(args.patches)
    if not patches_path.exists():
        raise ConfigInvalidError(f"patch cache not found: {patches_path}")
    split, spec = _load_cache(patches_path)
    values = _merge_config(args, TRAIN_KEYS)
    cfg = TrainConfig(**values)
    model = build_network(patch_size=spec.patch_size, seed=cfg.seed)

    def sink(epoch, mean_loss):
        if not args.quiet:
            print(f"epoch {epoch}/{cfg.epochs}  loss {mean_loss:.4f}")
        return False

    trained = train(model, split, cfg, progress_sink=sink, patch_spec=spec)
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(trained, out)
    loss_path = out.with_suffix(".loss.csv")
    save_loss_log(trained.training_history, loss_path)
    config = {"train": cfg.to_dict(), "patches": patches_path.name}
    write_run_manifest(out.parent, "train", config,
                       {out.name: out, loss_path.name: loss_path})
    print(f"wrote model to {out} (final loss "
          f"{trained.training_history[-1]:.4f})")
    return 0


def cmd_evaluate(args) -> int:
    patches_path = _resolve(args.patches)
    model_path = _resolve(args.model)
    for path, what in ((patches_path, "patch cache"), (model_path, "model")):
        if not path.exists():
            raise ConfigInvalidError(f"{what} not found: {path}")
    split, spec = _load_cache(patches_path)
    model = _load_model_file(model_path)
    if model.config.patch_size != spec.patch_size:
        raise ConfigInvalidError(
            f"model expects {model.config.patch_size}px patches, "
            f"cache holds {spec.patch_size}px"
        )

    labels = np.array([p.label for p in split.test])
    test_pixels = np.stack([p.pixels for p in split.test])
    cnn = ScoredSet(predict_batch(model, test_pixels), labels)

    et_cfg = ExtraTreesConfig(seed=args.seed)
    forest = extra_trees_train(
        feature_matrix(split.train),
        np.array([p.label for p in split.train]),
        et_cfg,
    )
    baseline = ScoredSet(extra_trees_predict(forest, feature_matrix(split.test)),
                         labels)

    comparison = compare_methods(cnn, baseline)
    out = _resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_roc_csv(comparison.cnn, out / "roc.csv")
    save_pr_csv(comparison.cnn, out / "pr.csv")
    save_roc_csv(comparison.baseline, out / "roc_baseline.csv")
    save_pr_csv(comparison.baseline, out / "pr_baseline.csv")
    save_summary_csv(comparison.summary_rows(), out / "summary.csv")
    config = {"patches": patches_path.name, "model": model_path.name,
              "baseline": {"n_trees": et_cfg.n_trees,
                           "k": et_cfg.k_candidate_features,
                           "n_min_leaf": et_cfg.n_min_leaf,
                           "seed": et_cfg.seed}}
    artifacts = {name: out / name for name in
                 ("roc.csv", "pr.csv", "roc_baseline.csv", "pr_baseline.csv",
                  "summary.csv")}
    write_run_manifest(out, "evaluate", config, artifacts)
    print(f"cnn auc={comparison.cnn.auc:.4f} ap={comparison.cnn.ap:.4f} | "
          f"extra-trees auc={comparison.baseline.auc:.4f} "
          f"ap={comparison.baseline.ap:.4f}")
    return 0


def _detector_patch_spec(model, args) -> PatchSpec:
    stored = model.provenance.get("patch_spec")
    if stored:
        return PatchSpec.from_dict(stored)
    return PatchSpec(patch_size=model.config.patch_size,
                     downsample_factor=args.downsample_factor or 2)


def cmd_detect(args) -> int:
    model_path = _resolve(args.model)
    corpus = _resolve(args.corpus)
    for path, what in ((model_path, "model"), (corpus, "corpus manifest")):
        if not path.exists():
            raise ConfigInvalidError(f"{what} not found: {path}")
    model = _load_model_file(model_path)
    spec = _detector_patch_spec(model, args)
    cfg = DetectorConfig(
        stride=args.stride,
        probability_threshold=args.threshold,
        overlap_threshold=args.iou,
    )
    images = load_manifest(corpus)
    if args.image:
        images = [im for im in images if im.id == args.image]
        if not images:
            raise ConfigInvalidError(f"image id {args.image!r} not in corpus")
    by_image = {im.id: detect(model, im, spec, cfg) for im in images}
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_detections_jsonl(by_image, out)
    config = {"model": model_path.name, "corpus": corpus.name,
              "spec": spec.to_dict(),
              "detector": {"stride": cfg.stride,
                           "probability_threshold": cfg.probability_threshold,
                           "overlap_threshold": cfg.overlap_threshold},
              "image": args.image}
    write_run_manifest(out.parent, "detect", config, {out.name: out})
    total = sum(len(v) for v in by_image.values())
    print(f"{total} detections across {len(images)} images -> {out}")
    return 0


def cmd_export_overlays(args) -> int:
    corpus = _resolve(args.corpus)
    detections_path = _resolve(args.detections)
    for path, what in ((corpus, "corpus manifest"),
                       (detections_path, "detections file")):
        if not path.exists():
            raise ConfigInvalidError(f"{what} not found: {path}")
    images = load_manifest(corpus)
    by_image = load_detections_jsonl(detections_path)
    out = _resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = {}
    for image in images:
        name = f"{image.id}.overlay.png"
        render_overlay(image, by_image.get(image.id, []), out / name)
        artifacts[name] = out / name
    config = {"corpus": corpus.name, "detections": detections_path.name}
    write_run_manifest(out, "export-overlays", config, artifacts)
    print(f"wrote {len(artifacts)} overlays to {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    data_dir = _resolve(args.data_dir) if args.data_dir else \
        Path(os.environ.get("PATHOSCOPE_DATA_DIR", "."))
    app = create_app(data_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathoscope",
        description="patch-based pathogen detection workbench",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic annotated corpus")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-images", dest="n_images", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("build-patches",
                       help="downsample, cut, balance, augment, split")
    p.add_argument("--corpus", required=True, help="corpus manifest.json")
    p.add_argument("--out", required=True, help="patch cache file (.pspc)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("image", "patch"), default="image",
                   help="split granularity (image = leak-free default)")
    p.add_argument("--downsample-factor", dest="downsample_factor", type=int)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--neg-cap-ratio", dest="neg_cap_ratio", type=int)
    p.add_argument("--target-label", dest="target_label")
    p.add_argument("--negatives-per-image", dest="negatives_per_image",
                   type=int)
    p.set_defaults(handler=cmd_build_patches)

    p = sub.add_parser("train", help="train the patch classifier")
    p.add_argument("--patches", required=True, help="patch cache (.pspc)")
    p.add_argument("--out", required=True, help="model file (.pscn)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate",
                       help="ROC/PR for the model and the forest baseline")
    p.add_argument("--patches", required=True, help="patch cache (.pspc)")
    p.add_argument("--model", required=True, help="model file (.pscn)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="baseline forest seed")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("detect", help="sliding-window detection on a corpus")
    p.add_argument("--model", required=True, help="model file (.pscn)")
    p.add_argument("--corpus", required=True, help="corpus manifest.json")
    p.add_argument("--out", required=True, help="detections JSONL path")
    p.add_argument("--image", help="restrict to one image id")
    p.add_argument("--stride", type=int)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--iou", type=float, default=0.3)
    p.add_argument("--downsample-factor", dest="downsample_factor", type=int,
                   help="only used when the model lacks patch provenance")
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser("export-overlays",
                       help="PNGs with truth (white) and detections (red)")
    p.add_argument("--corpus", required=True, help="corpus manifest.json")
    p.add_argument("--detections", required=True, help="detections JSONL")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_export_overlays)

    p = sub.add_parser("serve", help="run the HTTP review workbench")
    p.add_argument("--data-dir", dest="data_dir",
                   help="workspace (default $PATHOSCOPE_DATA_DIR or .)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(handler=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except PathoscopeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
