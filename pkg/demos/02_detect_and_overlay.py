"""
Sliding-window detection on a whole field of view
=================================================

Trains a quick model, slides it across a full synthetic image, suppresses
overlapping hits, matches detections against the ground truth, and writes
an overlay PNG (white = annotated truth, red = detections).
"""

from pathlib import Path

from pathoscope.detect import (
    DetectorConfig,
    detect,
    match_detections,
    render_overlay,
)
from pathoscope.model import TrainConfig, build_network, train
from pathoscope.patches import PatchSpec, split_50_50
from pathoscope.synth import SynthConfig, generate

# 1. Corpus and a quickly trained model (same pipeline as demo 01).
corpus = generate(SynthConfig(n_images=30, image_size=192, seed=8))
spec = PatchSpec(patch_size=24, downsample_factor=2, negatives_per_image=25)
split = split_50_50(corpus, spec, seed=8)
trained = train(build_network(patch_size=spec.patch_size, seed=8), split,
                TrainConfig(epochs=10, seed=8))

# 2. Detect on an image the model never saw as training patches.
test_ids = {p.source_image_id for p in split.test}
scene = next(im for im in corpus if im.id in sorted(test_ids))
cfg = DetectorConfig(probability_threshold=0.5, overlap_threshold=0.3)
detections = detect(trained, scene, spec, cfg)
print(f"{scene.id}: {len(scene.boxes)} truth boxes, "
      f"{len(detections)} detections")
for d in detections:
    print(f"  p={d.probability:.3f}  box={d.box.to_list()}")

# 3. How many are right? Greedy matching, best probability first; a hit
#    means the detection center falls in a truth box or IoU >= 0.5.
result = match_detections(detections, scene.boxes)
print(f"matched: {result.true_positives} TP, {result.false_positives} FP, "
      f"{result.false_negatives} FN")

# 4. Render the overlay next to this script.
out = Path(__file__).parent / f"{scene.id}.overlay.png"
render_overlay(scene, detections, path=out)
print(f"overlay written to {out}")
