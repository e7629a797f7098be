"""Patch-level evaluation: ROC/PR curves and the classical baseline.

The curves are computed from first principles: a descending threshold
sweep with tied scores collapsed into a single step (so AUC equals the
Mann-Whitney statistic with half credit for ties) and step-wise,
non-interpolated AP with ties broken by stable input order.

The baseline mirrors the traditional approach the CNN is compared
against: 14 shape/moment features per patch feeding an extremely
randomized forest -- every tree sees the full training set, splits draw
one uniform threshold per candidate feature, and the best of k by Gini
wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigInvalidError,
    EmptyTrainingError,
    LengthMismatchError,
    NoPositivesError,
    SingleClassError,
)

__all__ = [
    "ScoredSet",
    "CurveReport",
    "ComparisonReport",
    "ExtraTreesConfig",
    "Forest",
    "roc_curve",
    "pr_curve",
    "curve_report",
    "compare_methods",
    "otsu_threshold",
    "shape_features",
    "feature_matrix",
    "FEATURE_NAMES",
    "extra_trees_train",
    "extra_trees_predict",
    "save_roc_csv",
    "save_pr_csv",
    "save_summary_csv",
]


@dataclass
class ScoredSet:
    """Parallel scores and binary labels for one method on one test set."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise LengthMismatchError(
                f"scores {self.scores.shape} vs labels {self.labels.shape}"
            )
        if not np.all(np.isfinite(self.scores)):
            raise ConfigInvalidError("scores must be finite")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ConfigInvalidError("labels must be 0 or 1")

    @property
    def n(self) -> int:
        return int(self.scores.size)

    @property
    def positive_fraction(self) -> float:
        return float(self.labels.mean()) if self.n else 0.0


@dataclass
class CurveReport:
    roc_points: list  # (fpr, tpr), starts (0,0), ends (1,1)
    auc: float
    pr_points: list  # (recall, precision), one per rank
    ap: float
    roc_thresholds: list = field(default_factory=list)
    pr_thresholds: list = field(default_factory=list)


def _ranked(scored: ScoredSet):
    """Indices in descending score; ties keep their input order."""
    return np.argsort(-scored.scores, kind="stable")


def roc_curve(scored: ScoredSet):
    """(points, auc) from a grouped threshold sweep + trapezoid rule."""
    n_pos = int(scored.labels.sum())
    n_neg = scored.n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC needs both classes present")
    order = _ranked(scored)
    s = scored.scores[order]
    y = scored.labels[order]
    cum_tp = np.cumsum(y)
    # one sweep step per distinct score: group ends where the value changes
    ends = np.append(np.nonzero(np.diff(s))[0], s.size - 1)
    tp = cum_tp[ends]
    fp = (ends + 1) - tp
    points = [(0.0, 0.0)] + [(float(f / n_neg), float(t / n_pos))
                             for f, t in zip(fp, tp)]
    thresholds = [math.inf] + [float(v) for v in s[np.append(0, ends[:-1] + 1)]]
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return points, float(auc)


def pr_curve(scored: ScoredSet):
    """(points, ap): step-wise AP over the stable descending ranking."""
    n_pos = int(scored.labels.sum())
    if n_pos == 0:
        raise NoPositivesError("AP needs at least one positive")
    order = _ranked(scored)
    y = scored.labels[order]
    cum_tp = np.cumsum(y)
    ranks = np.arange(1, scored.n + 1)
    precision = cum_tp / ranks
    recall = cum_tp / n_pos
    ap = float(precision[y == 1].sum() / n_pos)
    points = list(zip(recall.tolist(), precision.tolist()))
    return points, ap


def curve_report(scored: ScoredSet) -> CurveReport:
    roc_points, auc = roc_curve(scored)
    pr_points, ap = pr_curve(scored)
    order = _ranked(scored)
    s = scored.scores[order]
    ends = np.append(np.nonzero(np.diff(s))[0], s.size - 1)
    roc_thresholds = [math.inf] + [float(v) for v in s[np.append(0, ends[:-1] + 1)]]
    return CurveReport(
        roc_points=roc_points, auc=auc,
        pr_points=pr_points, ap=ap,
        roc_thresholds=roc_thresholds,
        pr_thresholds=[float(v) for v in s],
    )


@dataclass
class ComparisonReport:
    cnn: CurveReport
    baseline: CurveReport
    n: int
    cnn_positive_fraction: float

    def summary_rows(self):
        return [
            ("cnn", self.cnn.auc, self.cnn.ap, self.n,
             self.cnn_positive_fraction),
            ("extra-trees", self.baseline.auc, self.baseline.ap, self.n,
             self.cnn_positive_fraction),
        ]


def compare_methods(cnn: ScoredSet, baseline: ScoredSet) -> ComparisonReport:
    """Side-by-side curves for two methods scored on the same patches."""
    if cnn.n != baseline.n:
        raise LengthMismatchError(
            f"cnn scored {cnn.n} patches, baseline {baseline.n}"
        )
    if not np.array_equal(cnn.labels, baseline.labels):
        raise LengthMismatchError("methods disagree on patch labels")
    return ComparisonReport(
        cnn=curve_report(cnn),
        baseline=curve_report(baseline),
        n=cnn.n,
        cnn_positive_fraction=cnn.positive_fraction,
    )


# ---------------------------------------------------------------------------
# shape features
# ---------------------------------------------------------------------------

FEATURE_NAMES = (
    "area_fraction", "perimeter", "compactness", "eccentricity",
    "centroid_offset",
    "fg_mean_r", "fg_mean_g", "fg_mean_b",
    "fg_std_r", "fg_std_g", "fg_std_b",
    "hu1", "hu2", "hu3",
)


def otsu_threshold(gray: np.ndarray):
    """Otsu's threshold over a 256-bin histogram of values in [0, 1].

    Returns the boundary value, or None when the histogram is degenerate
    (no split separates two non-empty classes with distinct means).
    """
    hist, edges = np.histogram(gray, bins=256, range=(0.0, 1.0))
    hist = hist.astype(np.float64)
    centers = (edges[:-1] + edges[1:]) / 2.0
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    mass0 = np.cumsum(hist * centers)
    mass1 = mass0[-1] - mass0
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return None
    mu0 = np.where(valid, mass0 / np.where(w0 > 0, w0, 1.0), 0.0)
    mu1 = np.where(valid, mass1 / np.where(w1 > 0, w1, 1.0), 0.0)
    between = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -1.0)
    best = int(np.argmax(between))
    if between[best] <= 0.0:
        return None
    return float(edges[best + 1])


def _mask_moments(mask: np.ndarray):
    """Central moments mu_pq (p = x exponent) of a binary mask."""
    ys, xs = np.nonzero(mask)
    m00 = float(xs.size)
    cx, cy = xs.mean(), ys.mean()
    dx, dy = xs - cx, ys - cy
    mu = {}
    for p, q in [(2, 0), (0, 2), (1, 1), (3, 0), (0, 3), (2, 1), (1, 2)]:
        mu[(p, q)] = float(np.sum(dx ** p * dy ** q))
    return m00, (cx, cy), mu


def _perimeter(mask: np.ndarray) -> int:
    """Foreground pixels with at least one 4-neighbor outside the mask."""
    padded = np.pad(mask, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return int((mask & ~interior).sum())


def shape_features(pixels: np.ndarray) -> np.ndarray:
    """14 shape/moment statistics of one (p, p, 3) patch in [0, 1].

    Foreground is the darker side of the Otsu split of the mean channel
    (stained objects are dark). A patch with no usable split yields the
    all-zero vector.
    """
    gray = pixels.mean(axis=2)
    threshold = otsu_threshold(gray)
    if threshold is None:
        return np.zeros(len(FEATURE_NAMES))
    mask = gray < threshold
    if not mask.any():
        return np.zeros(len(FEATURE_NAMES))

    p = gray.shape[0]
    area = float(mask.sum())
    perimeter = float(_perimeter(mask))
    compactness = 4.0 * math.pi * area / perimeter ** 2 if perimeter else 0.0

    m00, (cx, cy), mu = _mask_moments(mask)
    # eccentricity from the covariance eigenvalues
    c20, c02, c11 = mu[(2, 0)] / m00, mu[(0, 2)] / m00, mu[(1, 1)] / m00
    half_trace = (c20 + c02) / 2.0
    det_root = math.sqrt(max(((c20 - c02) / 2.0) ** 2 + c11 ** 2, 0.0))
    lam1, lam2 = half_trace + det_root, half_trace - det_root
    eccentricity = math.sqrt(max(1.0 - lam2 / lam1, 0.0)) if lam1 > 0 else 0.0

    center = (p - 1) / 2.0
    centroid_offset = math.hypot(cx - center, cy - center) / p

    fg = pixels[mask]
    means = fg.mean(axis=0)
    stds = fg.std(axis=0)

    def eta(pq):
        pw, qw = pq
        return mu[pq] / m00 ** (1.0 + (pw + qw) / 2.0)

    e20, e02, e11 = eta((2, 0)), eta((0, 2)), eta((1, 1))
    e30, e03, e21, e12 = eta((3, 0)), eta((0, 3)), eta((2, 1)), eta((1, 2))
    hu1 = e20 + e02
    hu2 = (e20 - e02) ** 2 + 4.0 * e11 ** 2
    hu3 = (e30 - 3.0 * e12) ** 2 + (3.0 * e21 - e03) ** 2

    return np.array([
        area / mask.size, perimeter, compactness, eccentricity,
        centroid_offset,
        means[0], means[1], means[2],
        stds[0], stds[1], stds[2],
        hu1, hu2, hu3,
    ])


def feature_matrix(patches) -> np.ndarray:
    """(N, 14) feature array for a list of patches."""
    return np.stack([shape_features(p.pixels) for p in patches])


# ---------------------------------------------------------------------------
# extremely randomized trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtraTreesConfig:
    n_trees: int = 100
    k_candidate_features: int = math.ceil(math.sqrt(len(FEATURE_NAMES)))
    n_min_leaf: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigInvalidError("n_trees must be >= 1")
        if self.k_candidate_features < 1 or self.n_min_leaf < 1:
            raise ConfigInvalidError("k and n_min_leaf must be >= 1")


@dataclass
class Forest:
    trees: list  # each tree: list of node dicts, root at index 0
    config: ExtraTreesConfig
    n_features: int


def _grow_tree(X, y, cfg, rng):
    nodes = []
    stack = [(_new_node(nodes), np.arange(y.size))]
    while stack:
        nid, idx = stack.pop()
        ys = y[idx]
        n = idx.size
        pos = int(ys.sum())
        if n <= cfg.n_min_leaf or pos == 0 or pos == n:
            nodes[nid] = {"leaf": pos / n}
            continue
        Xn = X[idx]
        mins, maxs = Xn.min(axis=0), Xn.max(axis=0)
        usable = np.nonzero(maxs > mins)[0]
        if usable.size == 0:
            nodes[nid] = {"leaf": pos / n}
            continue
        k = min(cfg.k_candidate_features, usable.size)
        feats = rng.choice(usable, size=k, replace=False)
        best = None
        for f in feats:
            f = int(f)
            thr = float(rng.uniform(mins[f], maxs[f]))
            left = Xn[:, f] < thr
            nl = int(left.sum())
            nr = n - nl
            if nl == 0 or nr == 0:
                continue
            pl = int(ys[left].sum())
            pr = pos - pl
            child_gini = (
                nl * (1.0 - (pl / nl) ** 2 - ((nl - pl) / nl) ** 2)
                + nr * (1.0 - (pr / nr) ** 2 - ((nr - pr) / nr) ** 2)
            ) / n
            if best is None or child_gini < best[0]:
                best = (child_gini, f, thr, left)
        if best is None:
            nodes[nid] = {"leaf": pos / n}
            continue
        _, f, thr, left = best
        left_id, right_id = _new_node(nodes), _new_node(nodes)
        nodes[nid] = {"feature": f, "threshold": thr,
                      "left": left_id, "right": right_id}
        stack.append((right_id, idx[~left]))
        stack.append((left_id, idx[left]))
    return nodes


def _new_node(nodes):
    nodes.append(None)
    return len(nodes) - 1


def extra_trees_train(features, labels, cfg: ExtraTreesConfig) -> Forest:
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise LengthMismatchError(f"features {X.shape} vs labels {y.shape}")
    if y.size < 2:
        raise EmptyTrainingError("need at least 2 training samples")
    if np.unique(y).size < 2:
        raise SingleClassError("training labels are all one class")
    trees = [
        _grow_tree(X, y, cfg, np.random.default_rng([cfg.seed, t]))
        for t in range(cfg.n_trees)
    ]
    return Forest(trees=trees, config=cfg, n_features=X.shape[1])


def _tree_predict(nodes, X):
    out = np.empty(X.shape[0])
    stack = [(0, np.arange(X.shape[0]))]
    while stack:
        nid, idx = stack.pop()
        if idx.size == 0:
            continue
        node = nodes[nid]
        if "leaf" in node:
            out[idx] = node["leaf"]
            continue
        mask = X[idx, node["feature"]] < node["threshold"]
        stack.append((node["left"], idx[mask]))
        stack.append((node["right"], idx[~mask]))
    return out


def extra_trees_predict(forest: Forest, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise LengthMismatchError(
            f"expected (n, {forest.n_features}) features, got {X.shape}"
        )
    total = np.zeros(X.shape[0])
    for nodes in forest.trees:
        total += _tree_predict(nodes, X)
    return total / len(forest.trees)


# ---------------------------------------------------------------------------
# CSV exports (the plot-data artifacts)
# ---------------------------------------------------------------------------

def save_roc_csv(report: CurveReport, path) -> None:
    lines = ["threshold,fpr,tpr"]
    for thr, (fpr, tpr) in zip(report.roc_thresholds, report.roc_points):
        lines.append(f"{thr!r},{fpr!r},{tpr!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_pr_csv(report: CurveReport, path) -> None:
    lines = ["threshold,recall,precision"]
    for thr, (recall, precision) in zip(report.pr_thresholds, report.pr_points):
        lines.append(f"{thr!r},{recall!r},{precision!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_summary_csv(rows, path) -> None:
    """rows: iterable of (method, auc, ap, n, positive_fraction)."""
    lines = ["method,auc,ap,n,positive_fraction"]
    for method, auc, ap, n, frac in rows:
        lines.append(f"{method},{auc!r},{ap!r},{n},{frac!r}")
    Path(path).write_text("\n".join(lines) + "\n")
