"""
Patch pipeline end to end: corpus -> patches -> CNN -> metrics
==============================================================

Generates a small synthetic corpus, cuts it into labelled patches,
trains the patch classifier for a few epochs, and compares it against
the shape-features + randomized-forest baseline. Everything is seeded,
so two runs of this script print identical numbers.
"""

import numpy as np

from pathoscope.evaluate import (
    ScoredSet,
    compare_methods,
    extra_trees_predict,
    extra_trees_train,
    ExtraTreesConfig,
    feature_matrix,
)
from pathoscope.model import TrainConfig, build_network, predict_batch, train
from pathoscope.patches import PatchSpec, split_50_50
from pathoscope.synth import SynthConfig, generate

# 1. A synthetic corpus: dark elliptical "pathogens" on a bright noisy
#    background, plus rectangles and rings that are never annotated.
corpus = generate(SynthConfig(n_images=40, image_size=192, seed=21))
print(f"corpus: {len(corpus)} images, "
      f"{sum(len(im.boxes) for im in corpus)} annotated objects")

# 2. Downsample, cut positives centered on boxes, sample clean negatives,
#    cap, augment, and split 50/50 by source image (no leakage).
spec = PatchSpec(patch_size=24, downsample_factor=2, negatives_per_image=25)
split = split_50_50(corpus, spec, seed=21)
print(f"patches: {len(split.train)} train / {len(split.test)} test "
      f"(train positives: {sum(p.label for p in split.train)})")

# 3. Train the small CNN. Ten epochs is plenty at this scale; watch the
#    mean loss fall.
model = build_network(patch_size=spec.patch_size, seed=21)
cfg = TrainConfig(epochs=10, learning_rate=0.01, momentum=0.9,
                  batch_size=64, seed=21)
trained = train(model, split, cfg,
                progress_sink=lambda e, l: print(f"  epoch {e:2d}  loss {l:.4f}"))

# 4. Score the held-out patches.
test_x = np.stack([p.pixels for p in split.test])
labels = np.array([p.label for p in split.test])
cnn_scores = predict_batch(trained, test_x)

# 5. The baseline: 14 shape features into extremely randomized trees.
forest = extra_trees_train(
    feature_matrix(split.train),
    np.array([p.label for p in split.train]),
    ExtraTreesConfig(seed=21),
)
baseline_scores = extra_trees_predict(forest, feature_matrix(split.test))

# 6. Compare on the identical test set.
report = compare_methods(ScoredSet(cnn_scores, labels),
                         ScoredSet(baseline_scores, labels))
for method, auc, ap, n, frac in report.summary_rows():
    print(f"{method:12s} AUC {auc:.4f}  AP {ap:.4f}  "
          f"(n={n}, positive fraction {frac:.3f})")
