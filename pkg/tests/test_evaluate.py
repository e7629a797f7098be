"""Evaluation-bench tests.

Oracles:
  * mann_whitney_auc -- every positive/negative pair compared directly,
    ties credited 0.5; AUC must match to 1e-9
  * stepwise_ap -- a literal loop over the ranked labels accumulating
    precision at each positive
Both are deliberately naive (quadratic / scalar loops).
"""

import csv
import math

import numpy as np
import pytest

from pathoscope.errors import (
    ConfigInvalidError,
    EmptyTrainingError,
    LengthMismatchError,
    NoPositivesError,
    SingleClassError,
)
from pathoscope.evaluate import (
    FEATURE_NAMES,
    ComparisonReport,
    CurveReport,
    ExtraTreesConfig,
    ScoredSet,
    compare_methods,
    curve_report,
    extra_trees_predict,
    extra_trees_train,
    feature_matrix,
    otsu_threshold,
    pr_curve,
    roc_curve,
    save_pr_csv,
    save_roc_csv,
    save_summary_csv,
    shape_features,
)
from pathoscope.patches import apply_dihedral


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def mann_whitney_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    credit = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                credit += 1.0
            elif p == q:
                credit += 0.5
    return credit / (len(pos) * len(neg))


def stepwise_ap(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = sum(labels)
    tp = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            tp += 1
            total += tp / rank
    return total / n_pos


def random_scored_set(rng, n, tie_fraction=0.0):
    scores = rng.random(n)
    if tie_fraction > 0:
        scores = np.round(scores, 1)  # collapse to 11 distinct values
    labels = rng.integers(0, 2, size=n)
    if labels.sum() == 0:
        labels[0] = 1
    if labels.sum() == n:
        labels[0] = 0
    return ScoredSet(scores=scores, labels=labels)


# ---------------------------------------------------------------------------
# ScoredSet basics
# ---------------------------------------------------------------------------

def test_scored_set_validation():
    with pytest.raises(LengthMismatchError):
        ScoredSet(scores=[0.1, 0.2], labels=[1])
    with pytest.raises(ConfigInvalidError):
        ScoredSet(scores=[0.1, float("nan")], labels=[1, 0])
    with pytest.raises(ConfigInvalidError):
        ScoredSet(scores=[0.1, 0.2], labels=[1, 2])
    s = ScoredSet(scores=[0.9, 0.1], labels=[1, 0])
    assert s.n == 2 and s.positive_fraction == 0.5


# ---------------------------------------------------------------------------
# ROC / AUC
# ---------------------------------------------------------------------------

def test_auc_worked_examples():
    _, auc = roc_curve(ScoredSet([0.9, 0.8, 0.3], [1, 1, 0]))
    assert auc == pytest.approx(1.0, abs=1e-12)
    _, auc = roc_curve(ScoredSet([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]))
    assert auc == pytest.approx(0.75, abs=1e-12)
    _, auc = roc_curve(ScoredSet([0.4, 0.4, 0.4, 0.4], [1, 0, 1, 0]))
    assert auc == pytest.approx(0.5, abs=1e-12)


def test_roc_points_shape():
    points, _ = roc_curve(ScoredSet([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]))
    assert points[0] == (0.0, 0.0) and points[-1] == (1.0, 1.0)
    xs = [x for x, _ in points]
    ys = [y for _, y in points]
    assert xs == sorted(xs) and ys == sorted(ys)


def test_roc_requires_both_classes():
    with pytest.raises(SingleClassError):
        roc_curve(ScoredSet([0.1, 0.2], [1, 1]))


def test_auc_matches_mann_whitney_with_and_without_ties():
    rng = np.random.default_rng(6)
    for trial in range(30):
        scored = random_scored_set(rng, int(rng.integers(5, 300)),
                                   tie_fraction=0.5 if trial % 2 else 0.0)
        _, auc = roc_curve(scored)
        oracle = mann_whitney_auc(scored.scores.tolist(),
                                  scored.labels.tolist())
        assert abs(auc - oracle) < 1e-9


def test_auc_invariant_under_monotone_transform():
    rng = np.random.default_rng(7)
    scored = random_scored_set(rng, 100)
    _, auc = roc_curve(scored)
    warped = ScoredSet(np.exp(3.0 * scored.scores) - 1.0, scored.labels)
    _, auc2 = roc_curve(warped)
    assert abs(auc - auc2) < 1e-12


def test_auc_permutation_invariant():
    rng = np.random.default_rng(8)
    scored = random_scored_set(rng, 80, tie_fraction=0.5)
    perm = rng.permutation(80)
    shuffled = ScoredSet(scored.scores[perm], scored.labels[perm])
    assert roc_curve(scored)[1] == pytest.approx(roc_curve(shuffled)[1],
                                                 abs=1e-12)


# ---------------------------------------------------------------------------
# PR / AP
# ---------------------------------------------------------------------------

def test_ap_worked_examples():
    _, ap = pr_curve(ScoredSet([0.9, 0.8, 0.7], [1, 0, 1]))
    assert ap == pytest.approx(5 / 6, abs=1e-12)
    _, ap = pr_curve(ScoredSet([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]))
    assert ap == pytest.approx(1.0, abs=1e-12)
    _, ap = pr_curve(ScoredSet([0.9, 0.8, 0.7, 0.1], [0, 0, 0, 1]))
    assert ap == pytest.approx(1 / 4, abs=1e-12)


def test_ap_requires_a_positive():
    with pytest.raises(NoPositivesError):
        pr_curve(ScoredSet([0.5, 0.6], [0, 0]))


def test_ap_matches_hand_oracle():
    rng = np.random.default_rng(9)
    for trial in range(30):
        scored = random_scored_set(rng, int(rng.integers(3, 300)),
                                   tie_fraction=0.5 if trial % 2 else 0.0)
        _, ap = pr_curve(scored)
        oracle = stepwise_ap(scored.scores.tolist(), scored.labels.tolist())
        assert abs(ap - oracle) < 1e-12


def test_ap_permutation_invariant_with_distinct_scores():
    rng = np.random.default_rng(10)
    scores = rng.permutation(np.linspace(0.0, 1.0, 60))
    labels = rng.integers(0, 2, size=60)
    labels[0] = 1
    scored = ScoredSet(scores, labels)
    perm = rng.permutation(60)
    shuffled = ScoredSet(scores[perm], labels[perm])
    assert pr_curve(scored)[1] == pytest.approx(pr_curve(shuffled)[1],
                                                abs=1e-12)


def test_pr_points_recall_reaches_one():
    points, _ = pr_curve(ScoredSet([0.9, 0.5, 0.4, 0.2], [1, 0, 1, 0]))
    assert points[-1][0] == pytest.approx(1.0)
    assert len(points) == 4


# ---------------------------------------------------------------------------
# comparison + CSV round trip
# ---------------------------------------------------------------------------

def test_compare_methods_identity_and_mismatch():
    rng = np.random.default_rng(11)
    scored = random_scored_set(rng, 50)
    report = compare_methods(scored, scored)
    assert report.cnn.auc == report.baseline.auc
    assert report.cnn.ap == report.baseline.ap
    with pytest.raises(LengthMismatchError):
        compare_methods(scored, random_scored_set(rng, 49))
    flipped = ScoredSet(scored.scores, 1 - scored.labels)
    with pytest.raises(LengthMismatchError):
        compare_methods(scored, flipped)


def test_csv_exports_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    scored = random_scored_set(rng, 40, tie_fraction=0.5)
    report = curve_report(scored)

    roc_path = tmp_path / "roc.csv"
    save_roc_csv(report, roc_path)
    with open(roc_path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(report.roc_points)
    assert math.isinf(float(rows[0]["threshold"]))
    for row, (fpr, tpr) in zip(rows, report.roc_points):
        assert float(row["fpr"]) == fpr and float(row["tpr"]) == tpr

    pr_path = tmp_path / "pr.csv"
    save_pr_csv(report, pr_path)
    with open(pr_path) as fh:
        rows = list(csv.DictReader(fh))
    for row, (recall, precision) in zip(rows, report.pr_points):
        assert float(row["recall"]) == recall
        assert float(row["precision"]) == precision

    summary_path = tmp_path / "summary.csv"
    comparison = compare_methods(scored, scored)
    save_summary_csv(comparison.summary_rows(), summary_path)
    with open(summary_path) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["cnn", "extra-trees"]
    assert float(rows[0]["auc"]) == comparison.cnn.auc
    assert float(rows[1]["ap"]) == comparison.baseline.ap
    assert int(rows[0]["n"]) == 40


# ---------------------------------------------------------------------------
# shape features
# ---------------------------------------------------------------------------

def _patch_from_mask(mask, dark=0.1, bright=0.9):
    """RGB patch where mask pixels are dark (the foreground convention)."""
    gray = np.where(mask, dark, bright).astype(np.float64)
    return np.stack([gray, gray, gray], axis=2)


def test_uniform_patch_gives_zero_vector():
    flat = np.full((16, 16, 3), 0.6)
    assert np.array_equal(shape_features(flat), np.zeros(14))


def test_otsu_splits_bimodal():
    gray = np.full((10, 10), 0.8)
    gray[3:7, 3:7] = 0.2
    threshold = otsu_threshold(gray)
    assert threshold is not None and 0.2 < threshold < 0.8
    assert otsu_threshold(np.full((8, 8), 0.5)) is None


def test_foreground_is_darker_side():
    mask = np.zeros((16, 16), dtype=bool)
    mask[4:12, 4:12] = True
    feats = shape_features(_patch_from_mask(mask))
    assert feats[0] == pytest.approx(64 / 256)  # area fraction of the DARK square
    assert feats[5] == pytest.approx(0.1)       # fg mean = dark value
    assert feats[8] == pytest.approx(0.0)       # uniform fg -> zero std


def test_disk_less_eccentric_than_bar():
    size = 32
    yy, xx = np.mgrid[0:size, 0:size]
    disk = (xx - 16) ** 2 + (yy - 16) ** 2 <= 8 ** 2
    bar = np.zeros((size, size), dtype=bool)
    bar[14:18, 4:28] = True
    ecc_disk = shape_features(_patch_from_mask(disk))[3]
    ecc_bar = shape_features(_patch_from_mask(bar))[3]
    assert ecc_disk < 0.3 < 0.9 < ecc_bar


def test_rotation_invariant_components():
    rng = np.random.default_rng(13)
    base = rng.uniform(0.4, 1.0, size=(20, 20, 3))
    base[5:14, 8:12, :] *= 0.2  # off-center dark bar
    rotated = apply_dihedral(base.astype(np.float32), 1)
    a = shape_features(base)
    b = shape_features(rotated.astype(np.float64))
    for idx in (0, 2, 11, 12, 13):  # area, compactness, hu1..3
        assert a[idx] == pytest.approx(b[idx], rel=1e-9, abs=1e-12), \
            FEATURE_NAMES[idx]
    # perimeter and centroid offset are also preserved by 90-degree turns
    assert a[1] == b[1]
    assert a[4] == pytest.approx(b[4], rel=1e-9)


def test_features_all_finite_on_random_patches():
    rng = np.random.default_rng(14)
    for _ in range(25):
        feats = shape_features(rng.random((12, 12, 3)))
        assert feats.shape == (14,)
        assert np.all(np.isfinite(feats))


# ---------------------------------------------------------------------------
# extra trees
# ---------------------------------------------------------------------------

def _separable_toy(n=60, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 2))
    y = (X[:, 0] > 0.5).astype(np.int64)
    if y.sum() in (0, n):
        y[0] = 1 - y[0]
    X[:, 0] += y * 0.5  # widen the margin
    return X, y


def test_extra_trees_validation():
    X, y = _separable_toy()
    with pytest.raises(EmptyTrainingError):
        extra_trees_train(X[:1], y[:1], ExtraTreesConfig(n_trees=2))
    with pytest.raises(SingleClassError):
        extra_trees_train(X[:5], np.ones(5, dtype=np.int64),
                          ExtraTreesConfig(n_trees=2))
    with pytest.raises(ConfigInvalidError):
        ExtraTreesConfig(n_trees=0)


def test_extra_trees_separable_perfect_accuracy():
    X, y = _separable_toy()
    cfg = ExtraTreesConfig(n_trees=30, k_candidate_features=2, seed=1)
    forest = extra_trees_train(X, y, cfg)
    scores = extra_trees_predict(forest, X)
    assert np.all((scores >= 0.0) & (scores <= 1.0))
    assert np.array_equal(scores > 0.5, y == 1)


def test_extra_trees_single_leaf_predicts_global_fraction():
    X, y = _separable_toy(40, seed=3)
    cfg = ExtraTreesConfig(n_trees=5, n_min_leaf=1000, seed=0)
    forest = extra_trees_train(X, y, cfg)
    scores = extra_trees_predict(forest, X)
    assert np.allclose(scores, y.mean())
    assert all(len(tree) == 1 for tree in forest.trees)


def test_extra_trees_deterministic():
    X, y = _separable_toy(50, seed=4)
    # probe points straddling the class boundary, where forests disagree
    probe = np.random.default_rng(5).uniform(0.3, 0.9, size=(40, 2))
    cfg = ExtraTreesConfig(n_trees=10, seed=7)
    a = extra_trees_predict(extra_trees_train(X, y, cfg), probe)
    b = extra_trees_predict(extra_trees_train(X, y, cfg), probe)
    assert np.array_equal(a, b)
    c = extra_trees_predict(
        extra_trees_train(X, y, ExtraTreesConfig(n_trees=10, seed=8)), probe)
    assert not np.array_equal(a, c)


def test_extra_trees_feature_count_checked():
    X, y = _separable_toy()
    forest = extra_trees_train(X, y, ExtraTreesConfig(n_trees=2))
    with pytest.raises(LengthMismatchError):
        extra_trees_predict(forest, np.zeros((3, 5)))


def test_feature_matrix_shape():
    from pathoscope.patches import Patch
    rng = np.random.default_rng(15)
    patches = [Patch(pixels=rng.random((8, 8, 3)).astype(np.float32),
                     label=0, source_image_id="s", origin=(0, 0))
               for _ in range(4)]
    assert feature_matrix(patches).shape == (4, 14)
