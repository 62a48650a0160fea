"""Feature ranking (chi-square, mutual information) and decision-tree RFE."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

N_CLASSES = 3

TIME8 = ("mean", "std", "skewness", "kurtosis", "zero_crossing_rate", "rms",
         "peak_to_peak", "positive_turning")
FREQ5 = ("variance", "kurtosis", "peak_to_peak", "negative_turning", "fft_mean_coefficient")
# The published 6-feature set lists only five names; the sixth reuses the
# already-computed spectrum so the extraction cost profile is unchanged.
FREQ6 = FREQ5 + ("spectral_centroid",)

FEATURE_PRESETS = {"time8": TIME8, "freq5": FREQ5, "freq6": FREQ6}


def paper_presets() -> tuple[list[str], list[str]]:
    """The two published subsets: time-domain (8) and frequency-inclusive (5 listed)."""
    return list(TIME8), list(FREQ5)


class SelectionError(ValueError):
    pass


@dataclass
class FeatureMatrix:
    X: np.ndarray
    y: np.ndarray
    names: list[str]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.names):
            raise SelectionError("column count must equal number of names")
        if self.X.shape[0] != self.y.size:
            raise SelectionError("label count must equal row count")

    def columns(self, idx: Sequence[int]) -> "FeatureMatrix":
        idx = list(idx)
        return FeatureMatrix(self.X[:, idx], self.y, [self.names[i] for i in idx])


@dataclass
class RankingResult:
    method: str
    scores: np.ndarray
    order: np.ndarray


@dataclass
class SubsetResult:
    selected: list[str]
    cv_accuracy: float
    elimination_trace: list[tuple[str, float]] = field(default_factory=list)


def _rank(method: str, scores: np.ndarray) -> RankingResult:
    order = np.argsort(-scores, kind="stable")
    return RankingResult(method, scores, order)


def chi2_scores(m: FeatureMatrix) -> RankingResult:
    X = m.X
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    Xn = np.where(hi > lo, (X - lo) / span, 0.0)
    classes = np.unique(m.y)
    observed = np.stack([Xn[m.y == c].sum(axis=0) for c in classes])
    prior = np.array([np.mean(m.y == c) for c in classes])[:, None]
    expected = prior * Xn.sum(axis=0)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (observed - expected) ** 2 / expected, 0.0)
    return _rank("chi2", terms.sum(axis=0))


def _bin(x: np.ndarray, bins: int) -> np.ndarray | None:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return None
    idx = np.floor((x - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def mutual_info(x: np.ndarray, y: np.ndarray, bins: int = 20) -> float:
    """Histogram MI between one feature and the labels, in nats."""
    b = _bin(np.asarray(x, dtype=np.float64), bins)
    if b is None:
        return 0.0
    y = np.asarray(y)
    classes, y_idx = np.unique(y, return_inverse=True)
    joint = np.zeros((bins, classes.size))
    np.add.at(joint, (b, y_idx), 1.0)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / (px @ py)[nz])))
    return max(mi, 0.0)


def mutual_info_scores(m: FeatureMatrix, bins: int = 20) -> RankingResult:
    if bins < 2:
        raise SelectionError("bins must be >= 2")
    scores = np.array([mutual_info(m.X[:, j], m.y, bins) for j in range(m.X.shape[1])])
    return _rank("mutual_info", scores)


# --------------------------------------------------------------------------
# decision tree
# --------------------------------------------------------------------------

def _entropy_rows(counts: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(totals > 0, counts / np.where(totals > 0, totals, 1), 0.0)
        logs = np.where(p > 0, np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return -(p * logs).sum(axis=-1)


@dataclass
class DecisionTree:
    """Array-encoded CART tree; ``feature[i] == -1`` marks a leaf."""

    feature: list[int]
    threshold: list[float]
    left: list[int]
    right: list[int]
    value: list[int]
    importances: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left, right = np.asarray(self.left), np.asarray(self.right)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = feature[node] >= 0
        while np.any(active):
            rows = np.flatnonzero(active)
            f = feature[node[rows]]
            go_left = X[rows, f] <= threshold[node[rows]]
            node[rows] = np.where(go_left, left[node[rows]], right[node[rows]])
            active = feature[node] >= 0
        return np.asarray(self.value)[node]


def train_tree(m: FeatureMatrix, max_depth: int | None = None) -> DecisionTree:
    """Entropy-criterion CART with midpoint thresholds.

    Ties go to the lowest feature index, then the lowest threshold. Impure nodes
    are split even at zero gain so that XOR-like structure stays reachable.
    """
    X, y = m.X, m.y
    if X.shape[0] == 0:
        raise SelectionError("cannot train a tree on an empty matrix")
    n, d = X.shape
    n_classes = max(N_CLASSES, int(y.max()) + 1)
    onehot = np.eye(n_classes)[y]
    tree = DecisionTree([], [], [], [], [], np.zeros(d))
    gains = np.zeros(d)

    def new_node(rows):
        counts = onehot[rows].sum(axis=0)
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.value.append(int(np.argmax(counts)))
        return len(tree.feature) - 1

    all_rows = np.arange(n)
    stack = [(all_rows, 0, new_node(all_rows))]
    while stack:
        rows, depth, node = stack.pop()
        counts = onehot[rows].sum(axis=0)
        if np.count_nonzero(counts) <= 1 or rows.size < 2:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        parent_h = float(_entropy_rows(counts))
        best = None  # (gain, feature, threshold)
        for j in range(d):
            col = X[rows, j]
            order = np.argsort(col, kind="stable")
            v = col[order]
            valid = np.flatnonzero(v[1:] > v[:-1])
            if valid.size == 0:
                continue
            cum = np.cumsum(onehot[rows[order]], axis=0)
            left_counts = cum[valid]
            right_counts = counts - left_counts
            nl = (valid + 1).astype(np.float64)
            nr = rows.size - nl
            child_h = (nl * _entropy_rows(left_counts) + nr * _entropy_rows(right_counts)) / rows.size
            gain = parent_h - child_h
            k = int(np.argmax(gain))
            if best is None or gain[k] > best[0] + 1e-12:
                thr = 0.5 * (v[valid[k]] + v[valid[k] + 1])
                if not thr < v[valid[k] + 1]:
                    thr = v[valid[k]]
                best = (float(gain[k]), j, float(thr))
        if best is None:
            continue
        gain, j, thr = best
        gains[j] += rows.size / n * max(gain, 0.0)
        mask = X[rows, j] <= thr
        left_node = new_node(rows[mask])
        right_node = new_node(rows[~mask])
        tree.feature[node] = j
        tree.threshold[node] = thr
        tree.left[node] = left_node
        tree.right[node] = right_node
        stack.append((rows[~mask], depth + 1, right_node))
        stack.append((rows[mask], depth + 1, left_node))
    total = gains.sum()
    tree.importances = gains / total if total > 0 else gains
    return tree


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold id per row, class-stratified under a seeded shuffle."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(y.size, dtype=np.int64)
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        fold_of[idx] = np.arange(idx.size) % folds
    return fold_of


def cv_accuracy(m: FeatureMatrix, folds: int = 5, seed: int = 0, max_depth: int | None = None,
                fold_of: np.ndarray | None = None) -> float:
    if fold_of is None:
        fold_of = stratified_folds(m.y, folds, seed)
    correct = 0
    for k in range(folds):
        test = fold_of == k
        if not test.any() or test.all():
            continue
        tree = train_tree(FeatureMatrix(m.X[~test], m.y[~test], m.names), max_depth)
        correct += int(np.sum(tree.predict(m.X[test]) == m.y[test]))
    return correct / m.y.size


def rfe(m: FeatureMatrix, max_size: int = 10, folds: int = 5, seed: int = 0,
        max_depth: int | None = None) -> list[SubsetResult]:
    """Backward elimination by tree importance; one result per size 1..max_size.

    Among equally unimportant features the one with the highest column index is
    dropped first.
    """
    d = m.X.shape[1]
    if not 1 <= max_size <= d:
        raise SelectionError(f"max_size must be in [1, {d}]")
    if folds < 2:
        raise SelectionError("folds must be >= 2")
    fold_of = stratified_folds(m.y, folds, seed)
    active = list(range(d))
    trace: list[tuple[str, float]] = []
    results: dict[int, SubsetResult] = {}
    while True:
        sub = m.columns(active)
        if len(active) <= max_size:
            acc = cv_accuracy(sub, folds, seed, max_depth, fold_of)
            results[len(active)] = SubsetResult(list(sub.names), acc, list(trace))
        if len(active) == 1:
            break
        imp = train_tree(sub, max_depth).importances
        pos = min(range(len(active)), key=lambda i: (imp[i], -i))
        trace.append((m.names[active[pos]], float(imp[pos])))
        del active[pos]
    return [results[k] for k in range(1, max_size + 1)]


def exhaustive_search(m: FeatureMatrix, candidates: Sequence[str], max_size: int = 3,
                      folds: int = 5, seed: int = 0, max_depth: int | None = None) -> list[SubsetResult]:
    """Best CV subset of each size up to ``max_size`` drawn from ``candidates``.

    Bounded to ``max_size <= 3`` so the search stays tractable.
    """
    if max_size > 3:
        raise SelectionError("exhaustive search is capped at subsets of size 3")
    if len(candidates) > 10:
        raise SelectionError("exhaustive search takes at most 10 candidates")
    fold_of = stratified_folds(m.y, folds, seed)
    col = {n: i for i, n in enumerate(m.names)}
    best = []
    for size in range(1, max_size + 1):
        winner = None
        for combo in itertools.combinations(candidates, size):
            acc = cv_accuracy(m.columns([col[n] for n in combo]), folds, seed, max_depth, fold_of)
            if winner is None or acc > winner.cv_accuracy:
                winner = SubsetResult(list(combo), acc)
        best.append(winner)
    return best


def write_ranking_csv(path, names: Sequence[str], chi2: RankingResult, mi: RankingResult) -> None:
    chi_rank = np.empty(len(names), dtype=np.int64)
    chi_rank[chi2.order] = np.arange(1, len(names) + 1)
    mi_rank = np.empty(len(names), dtype=np.int64)
    mi_rank[mi.order] = np.arange(1, len(names) + 1)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "chi2_score", "mi_score", "chi2_rank", "mi_rank"])
        for j, name in enumerate(names):
            writer.writerow([name, repr(float(chi2.scores[j])), repr(float(mi.scores[j])),
                             int(chi_rank[j]), int(mi_rank[j])])

