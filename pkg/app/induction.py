import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from data import SampleHandle, TableData

logger = logging.getLogger(__name__)

LEAF = -1
MIN_SAMPLES_SPLIT = 2
# float slack when comparing split scores built from integer class counts
SCORE_EPS = 1e-12

FitnessValue = float


class InductionError(Exception):
    """Raised on unusable tree inputs: empty mask, empty rows, or a mask mismatch."""

    def __init__(self, message: str):
        super().__init__(message)


@dataclass
class EvalBudgetCounter:
    surrogate_evals: int = 0
    full_evals: int = 0
    instances_processed: int = 0
    cache_hits: int = 0

    def record(self, rows: int, full: bool) -> None:
        if full:
            self.full_evals += 1
        else:
            self.surrogate_evals += 1
        self.instances_processed += rows

    def merge(self, other: "EvalBudgetCounter") -> None:
        self.surrogate_evals += other.surrogate_evals
        self.full_evals += other.full_evals
        self.instances_processed += other.instances_processed
        self.cache_hits += other.cache_hits

    def snapshot(self) -> "EvalBudgetCounter":
        return EvalBudgetCounter(
            self.surrogate_evals, self.full_evals, self.instances_processed, self.cache_hits
        )


@dataclass(frozen=True)
class TreeModel:
    """Flat binary tree; node 0 is the root.

    feature[i] == LEAF marks a leaf whose class is value[i]. Internal nodes send a
    row left iff row[feature[i]] <= threshold[i].
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    mask: np.ndarray
    trained_on: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] != LEAF:
                depths[self.left[node]] = depths[self.right[node]] = depths[node] + 1
        return int(depths.max())


def as_mask(mask, n_features: Optional[int] = None) -> np.ndarray:
    bits = np.asarray(mask, dtype=bool)
    if bits.ndim != 1:
        raise InductionError("mask must be a bit vector")
    if n_features is not None and bits.size != n_features:
        raise InductionError(f"mask has {bits.size} bits, data has {n_features} features")
    return bits


def repair_mask(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Return mask unchanged if non-empty, else a copy with one random bit set."""
    if mask.any():
        return mask
    repaired = mask.copy()
    repaired[rng.integers(mask.size)] = True
    return repaired


def _gini_scores(xs: np.ndarray, ys_onehot: np.ndarray, totals: np.ndarray) -> np.ndarray:
    """Sum of squared class counts over size, per child, for every cut of sorted xs.

    Weighted Gini of a cut is 1 - score / n, so the best cut maximizes score.
    """
    n = xs.size
    left = np.cumsum(ys_onehot, axis=0)[:-1]
    right = totals - left
    n_left = np.arange(1, n, dtype=np.float64)
    score = (left**2).sum(axis=1) / n_left + (right**2).sum(axis=1) / (n - n_left)
    score[xs[:-1] == xs[1:]] = -np.inf
    return score


def _best_split(x: np.ndarray, y: np.ndarray, columns: np.ndarray, n_classes: int):
    onehot = np.eye(n_classes, dtype=np.int64)[y]
    totals = onehot.sum(axis=0)
    best_score, best_feature, best_threshold = -np.inf, None, None
    for column in columns:
        values = x[:, column]
        order = np.argsort(values, kind="stable")
        xs = values[order]
        if xs[0] == xs[-1]:
            continue
        score = _gini_scores(xs, onehot[order], totals)
        # first cut within float slack of the maximum, i.e. the smallest threshold
        cut = int(np.flatnonzero(score >= score.max() - SCORE_EPS)[0])
        if score[cut] > best_score + SCORE_EPS:
            best_score = score[cut]
            best_feature = int(column)
            best_threshold = (xs[cut] + xs[cut + 1]) / 2.0
    return best_feature, best_threshold


def majority_class(labels: np.ndarray, n_classes: int) -> int:
    return int(np.argmax(np.bincount(labels, minlength=n_classes)))


def fit_tree(rows: TableData, mask, sample: Optional[SampleHandle] = None) -> TreeModel:
    bits = as_mask(mask, rows.n_features)
    if not bits.any():
        raise InductionError("mask selects no features")
    if sample is not None:
        rows = rows.take(sample.indices)
    if rows.n_instances == 0:
        raise InductionError("no training rows")

    x, y = rows.features, rows.labels
    columns = np.flatnonzero(bits)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(0)
        return len(feature) - 1

    stack = [(new_node(), np.arange(rows.n_instances))]
    while stack:
        node, idx = stack.pop()
        node_y = y[idx]
        value[node] = majority_class(node_y, rows.n_classes)
        if idx.size < MIN_SAMPLES_SPLIT or np.all(node_y == node_y[0]):
            continue
        split_feature, split_threshold = _best_split(x[idx], node_y, columns, rows.n_classes)
        if split_feature is None:
            continue
        goes_left = x[idx, split_feature] <= split_threshold
        feature[node] = split_feature
        threshold[node] = split_threshold
        left[node] = new_node()
        right[node] = new_node()
        stack.append((right[node], idx[~goes_left]))
        stack.append((left[node], idx[goes_left]))

    return TreeModel(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.int64),
        mask=bits.copy(),
        trained_on=rows.n_instances,
    )


def predict(model: TreeModel, rows: TableData, mask) -> np.ndarray:
    bits = as_mask(mask, rows.n_features)
    if not np.array_equal(bits, model.mask):
        raise InductionError("predict mask differs from the fit mask")
    x = rows.features
    node = np.zeros(rows.n_instances, dtype=np.int64)
    active = model.feature[node] != LEAF
    while active.any():
        at = node[active]
        rows_at = np.flatnonzero(active)
        go_left = x[rows_at, model.feature[at]] <= model.threshold[at]
        node[rows_at] = np.where(go_left, model.left[at], model.right[at])
        active = model.feature[node] != LEAF
    return model.value[node]


def accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    return float(np.count_nonzero(predicted == labels)) / labels.size


def fitness(
    mask,
    train_view: TableData,
    validation: TableData,
    counter: EvalBudgetCounter,
    sample: Optional[SampleHandle] = None,
    rng: Optional[np.random.Generator] = None,
) -> FitnessValue:
    """Validation accuracy of a tree trained on the view's rows with the mask's features.

    With `sample` the view is the sampled rows of a surrogate level, otherwise all of
    `train_view` (the original function). Empty masks are repaired with `rng`.
    """
    bits = as_mask(mask, train_view.n_features)
    if not bits.any():
        if rng is None:
            raise InductionError("empty mask and no generator to repair it")
        bits = repair_mask(bits, rng)
    model = fit_tree(train_view, bits, sample)
    counter.record(model.trained_on, full=sample is None)
    return accuracy(predict(model, validation, bits), validation.labels)


def majority_baseline(labels) -> FitnessValue:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise InductionError("no labels")
    return float(np.bincount(labels).max()) / labels.size


def holdout_accuracy(mask, train: TableData, holdout: TableData) -> float:
    bits = as_mask(mask, train.n_features)
    model = fit_tree(train, bits)
    return accuracy(predict(model, holdout, bits), holdout.labels)
