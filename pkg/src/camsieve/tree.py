"""CART-style decision tree: training, Gini importances, pruning, k-fold CV.

Splits minimize Gini impurity over every midpoint between consecutive
distinct feature values. Near-tied candidates are re-compared with exact
integer arithmetic so the chosen split is reproducible across platforms
and reimplementations: ties go to the lowest feature index, then the
lowest threshold. Prediction ties go to the first class in declared order.
"""
from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    AllFeaturesPruned,
    CorruptModel,
    DimensionMismatch,
    EmptyDataset,
    InsufficientSamples,
    UncleanData,
)
from .features import schema_hash

DEFAULT_MAX_DEPTH = 11
DEFAULT_MIN_SAMPLES_SPLIT = 2
DEFAULT_SEED = 42
DEFAULT_K_FOLDS = 10

# importance-threshold presets: the first drops only negligible features,
# the second trades a few more features for a compact model
IMPORTANCE_THRESHOLD_NEGLIGIBLE = 1e-6
IMPORTANCE_THRESHOLD_COMPACT = 1e-4

MODEL_FORMAT = "camsieve-tree"
MODEL_VERSION = 1

def _tie_margin(n: int) -> float:
    # float scores within this margin of the best are re-ranked exactly;
    # comfortably above the scan's accumulated rounding error (which grows
    # with n), and false inclusions only cost an exact re-check
    return 1e-9 + n * 1e-13


def gini(class_counts: Sequence[int]) -> float:
    """Gini impurity 1 - sum(p_i^2); 0 for empty counts."""
    total = sum(class_counts)
    if total == 0:
        return 0.0
    return 1.0 - sum((c / total) ** 2 for c in class_counts)


@dataclass(frozen=True)
class _Candidate:
    """One split candidate with the integers needed for exact comparison.

    Lower weighted child impurity A / (n * nl * nr) means higher gain, so
    candidates compare by cross-multiplied integer products.
    """

    feature: int
    threshold: float
    impurity_num: int  # A = nr*(nl^2 - sum(left^2)) + nl*(nr^2 - sum(right^2))
    pair_product: int  # nl * nr

    def better_than(self, other: "_Candidate") -> bool:
        lhs = self.impurity_num * other.pair_product
        rhs = other.impurity_num * self.pair_product
        if lhs != rhs:
            return lhs < rhs
        return (self.feature, self.threshold) < (other.feature, other.threshold)


def best_split(
    X: np.ndarray, y: np.ndarray, n_classes: int, candidate_features: Sequence[int]
) -> tuple[int, float, float] | None:
    """Exhaustive best (feature, threshold) by Gini gain; None without positive gain.

    y must be integer class ids in [0, n_classes). Returns (feature_index,
    threshold, gain).
    """
    n = len(y)
    if n < 2:
        return None
    onehot = np.zeros((n, n_classes), dtype=np.int64)
    onehot[np.arange(n), y] = 1
    parent_counts = onehot.sum(axis=0)
    parent_sq = int((parent_counts * parent_counts).sum())
    if parent_sq == n * n:  # pure node
        return None

    best: _Candidate | None = None
    margin = _tie_margin(n)
    for fi in sorted(candidate_features):
        col = X[:, fi]
        order = np.argsort(col, kind="stable")
        sv = col[order]
        boundaries = np.nonzero(sv[1:] != sv[:-1])[0]
        if boundaries.size == 0:
            continue
        cum = onehot[order].cumsum(axis=0)
        left = cum[boundaries]
        # scan in float (no overflow at any n), confirm near-ties exactly
        nl = (boundaries + 1).astype(np.float64)
        nr = n - nl
        right = (parent_counts[None, :] - left).astype(np.float64)
        leftf = left.astype(np.float64)
        sl = (leftf * leftf).sum(axis=1)
        sr = (right * right).sum(axis=1)
        w = (nr * (nl * nl - sl) + nl * (nr * nr - sr)) / (nl * nr)
        w_min = w.min()
        for idx in np.nonzero(w <= w_min + margin)[0]:
            b = int(boundaries[idx])
            threshold = float((sv[b] + sv[b + 1]) / 2.0)
            if threshold >= sv[b + 1]:  # midpoint rounded up between adjacent floats
                threshold = float(sv[b])
            l_counts = [int(c) for c in left[idx]]
            nl_i = b + 1
            nr_i = n - nl_i
            r_counts = [int(t) - c for t, c in zip(parent_counts, l_counts)]
            s_left = sum(c * c for c in l_counts)
            s_right = sum(c * c for c in r_counts)
            cand = _Candidate(
                feature=fi,
                threshold=threshold,
                impurity_num=nr_i * (nl_i * nl_i - s_left) + nl_i * (nr_i * nr_i - s_right),
                pair_product=nl_i * nr_i,
            )
            if best is None or cand.better_than(best):
                best = cand

    if best is None:
        return None
    # positive gain check, exact: (n^2 - parent_sq) * pair > A * n
    if (n * n - parent_sq) * best.pair_product <= best.impurity_num * n:
        return None
    gain = gini(parent_counts.tolist()) - best.impurity_num / (n * best.pair_product)
    return best.feature, best.threshold, gain


@dataclass(frozen=True)
class TreeNode:
    feature: int  # -1 marks a leaf
    threshold: float
    left: int  # child indexes into the node array, -1 for leaves
    right: int
    counts: tuple[int, ...]

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass(frozen=True)
class DecisionTreeModel:
    nodes: tuple[TreeNode, ...]
    max_depth: int
    feature_names: tuple[str, ...]
    class_names: tuple[str, ...]
    training_meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.feature_names)

    def leaf_for(self, vector: Sequence[float]) -> TreeNode:
        if len(vector) != self.n_features:
            raise DimensionMismatch(
                f"vector has {len(vector)} features, model expects {self.n_features}"
            )
        node = self.nodes[0]
        while not node.is_leaf:
            node = self.nodes[node.left if vector[node.feature] <= node.threshold else node.right]
        return node


def _as_matrix(X) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("feature matrix must be 2-dimensional")
    return arr


def train(
    X,
    y: Sequence[str],
    feature_names: Sequence[str],
    class_names: Sequence[str] | None = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
    min_samples_split: int = DEFAULT_MIN_SAMPLES_SPLIT,
    seed: int = DEFAULT_SEED,
    candidate_features: Sequence[int] | None = None,
) -> DecisionTreeModel:
    """Deterministic recursive partitioning; stops at depth, purity or size.

    candidate_features restricts which columns may be split on without
    changing the feature space (used by importance pruning).
    """
    arr = _as_matrix(X)
    n, f = arr.shape
    if n == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if f != len(feature_names):
        raise DimensionMismatch(f"matrix has {f} columns, {len(feature_names)} names given")
    if not np.isfinite(arr).all():
        raise UncleanData("dataset contains non-finite values; run cleaning first")
    if class_names is None:
        class_names = sorted(set(y))
    class_index = {c: i for i, c in enumerate(class_names)}
    labels = np.array([class_index[v] for v in y], dtype=np.int64)
    k = len(class_names)
    candidates = tuple(range(f)) if candidate_features is None else tuple(sorted(candidate_features))

    nodes: list[TreeNode] = []

    def build(idx: np.ndarray, depth: int) -> int:
        counts = tuple(int(c) for c in np.bincount(labels[idx], minlength=k))
        my_index = len(nodes)
        nodes.append(TreeNode(-1, 0.0, -1, -1, counts))  # placeholder
        split = None
        if depth < max_depth and len(idx) >= min_samples_split:
            split = best_split(arr[idx], labels[idx], k, candidates)
        if split is not None:
            fi, threshold, _gain = split
            mask = arr[idx, fi] <= threshold
            left = build(idx[mask], depth + 1)
            right = build(idx[~mask], depth + 1)
            nodes[my_index] = TreeNode(fi, threshold, left, right, counts)
        return my_index

    build(np.arange(n), 0)
    return DecisionTreeModel(
        nodes=tuple(nodes),
        max_depth=max_depth,
        feature_names=tuple(feature_names),
        class_names=tuple(class_names),
        training_meta={
            "seed": seed,
            "n_samples": n,
            "min_samples_split": min_samples_split,
            "candidate_features": list(candidates) if candidate_features is not None else None,
            "importance_threshold": None,
        },
    )


def predict_proba(model: DecisionTreeModel, vector: Sequence[float]) -> tuple[float, ...]:
    """Relative class frequencies of the reached leaf; sums to 1."""
    counts = model.leaf_for(vector).counts
    total = sum(counts)
    return tuple(c / total for c in counts)


def predict(model: DecisionTreeModel, vector: Sequence[float]) -> str:
    """Majority class of the reached leaf; ties go to the first declared class."""
    proba = predict_proba(model, vector)
    best = max(range(len(proba)), key=lambda i: (proba[i], -i))
    return model.class_names[best]


def feature_importances(model: DecisionTreeModel) -> tuple[float, ...]:
    """Normalized Gini importances; all zeros for a single-leaf tree."""
    raw = [0.0] * model.n_features
    n_root = sum(model.nodes[0].counts)
    for node in model.nodes:
        if node.is_leaf:
            continue
        left = model.nodes[node.left]
        right = model.nodes[node.right]
        n_node = sum(node.counts)
        decrease = gini(node.counts) - (
            sum(left.counts) / n_node * gini(left.counts)
            + sum(right.counts) / n_node * gini(right.counts)
        )
        raw[node.feature] += n_node / n_root * decrease
    total = sum(raw)
    if total <= 0.0:
        return tuple(0.0 for _ in raw)
    return tuple(v / total for v in raw)


def prune_features(
    X,
    y: Sequence[str],
    feature_names: Sequence[str],
    threshold: float = IMPORTANCE_THRESHOLD_COMPACT,
    class_names: Sequence[str] | None = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
    min_samples_split: int = DEFAULT_MIN_SAMPLES_SPLIT,
    seed: int = DEFAULT_SEED,
) -> tuple[tuple[int, ...], DecisionTreeModel]:
    """Single pass: train on everything, drop features with importance below
    the threshold, retrain restricted to the survivors."""
    full = train(
        X, y, feature_names, class_names=class_names, max_depth=max_depth,
        min_samples_split=min_samples_split, seed=seed,
    )
    importances = feature_importances(full)
    selected = tuple(i for i, imp in enumerate(importances) if imp >= threshold)
    if not selected:
        raise AllFeaturesPruned(f"threshold {threshold} removed all {len(importances)} features")
    pruned = train(
        X, y, feature_names, class_names=full.class_names, max_depth=max_depth,
        min_samples_split=min_samples_split, seed=seed, candidate_features=selected,
    )
    pruned.training_meta["importance_threshold"] = threshold
    return selected, pruned


@dataclass(frozen=True)
class CvReport:
    fold_accuracies: tuple[float, ...]
    mean: float
    std: float
    confusion: tuple[tuple[int, ...], ...]  # rows true class, columns predicted
    class_names: tuple[str, ...]
    params: dict

    def render(self) -> str:
        lines = [
            f"{len(self.fold_accuracies)}-fold cross-validation "
            f"(max_depth={self.params['max_depth']}, seed={self.params['seed']})",
            f"mean accuracy: {self.mean:.6f}  std: {self.std:.6f}",
            "fold accuracies: " + ", ".join(f"{a:.6f}" for a in self.fold_accuracies),
            "confusion matrix (rows true, columns predicted):",
        ]
        width = max(len(c) for c in self.class_names) + 2
        header = " " * width + "".join(f"{c:>{width}}" for c in self.class_names)
        lines.append(header)
        for name, row in zip(self.class_names, self.confusion):
            lines.append(f"{name:>{width}}" + "".join(f"{v:>{width}}" for v in row))
        return "\n".join(lines) + "\n"


def stratified_folds(y: Sequence[str], k: int, seed: int) -> list[list[int]]:
    """Deterministic stratified fold assignment: per-class shuffle, round robin."""
    by_class: dict[str, list[int]] = {}
    for i, label in enumerate(y):
        by_class.setdefault(label, []).append(i)
    rng = random.Random(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for label in sorted(by_class):
        idx = by_class[label]
        if len(idx) < k:
            raise InsufficientSamples(f"class {label!r} has {len(idx)} samples, need >= {k}")
        rng.shuffle(idx)
        for j, sample in enumerate(idx):
            folds[j % k].append(sample)
    return [sorted(fold) for fold in folds]


def cross_validate(
    X,
    y: Sequence[str],
    feature_names: Sequence[str],
    k: int = DEFAULT_K_FOLDS,
    class_names: Sequence[str] | None = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
    min_samples_split: int = DEFAULT_MIN_SAMPLES_SPLIT,
    seed: int = DEFAULT_SEED,
    candidate_features: Sequence[int] | None = None,
) -> CvReport:
    """Stratified k-fold accuracy with a summed confusion matrix."""
    arr = _as_matrix(X)
    if class_names is None:
        class_names = sorted(set(y))
    class_index = {c: i for i, c in enumerate(class_names)}
    folds = stratified_folds(y, k, seed)
    y_list = list(y)

    accuracies: list[float] = []
    confusion = [[0] * len(class_names) for _ in class_names]
    for fold in folds:
        in_fold = set(fold)
        train_idx = [i for i in range(len(y_list)) if i not in in_fold]
        model = train(
            arr[train_idx], [y_list[i] for i in train_idx], feature_names,
            class_names=class_names, max_depth=max_depth,
            min_samples_split=min_samples_split, seed=seed,
            candidate_features=candidate_features,
        )
        correct = 0
        for i in fold:
            predicted = predict(model, arr[i])
            confusion[class_index[y_list[i]]][class_index[predicted]] += 1
            correct += predicted == y_list[i]
        accuracies.append(correct / len(fold))

    mean = sum(accuracies) / len(accuracies)
    if len(accuracies) > 1:
        std = math.sqrt(sum((a - mean) ** 2 for a in accuracies) / (len(accuracies) - 1))
    else:
        std = 0.0
    return CvReport(
        fold_accuracies=tuple(accuracies),
        mean=mean,
        std=std,
        confusion=tuple(tuple(row) for row in confusion),
        class_names=tuple(class_names),
        params={
            "k": k,
            "max_depth": max_depth,
            "min_samples_split": min_samples_split,
            "seed": seed,
        },
    )


def _model_payload(model: DecisionTreeModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "max_depth": model.max_depth,
        "feature_names": list(model.feature_names),
        "schema_hash": model.schema_hash,
        "class_names": list(model.class_names),
        "training_meta": model.training_meta,
        "nodes": [
            [n.feature, n.threshold, n.left, n.right, list(n.counts)] for n in model.nodes
        ],
    }


def model_bytes(model: DecisionTreeModel) -> bytes:
    """Canonical serialized form; identical training runs give identical bytes."""
    payload = _model_payload(model)
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    checksum = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return json.dumps({"checksum": checksum, "payload": payload}, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")


def save_model(model: DecisionTreeModel, path: str | Path) -> None:
    Path(path).write_bytes(model_bytes(model))


def load_model(path: str | Path) -> DecisionTreeModel:
    """Inverse of save_model; checksum or version problems raise CorruptModel."""
    try:
        wrapper = json.loads(Path(path).read_bytes())
        checksum = wrapper["checksum"]
        payload = wrapper["payload"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptModel(f"{path}: not a model file ({exc})") from exc
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != checksum:
        raise CorruptModel(f"{path}: checksum mismatch")
    if payload.get("format") != MODEL_FORMAT or payload.get("version") != MODEL_VERSION:
        raise CorruptModel(
            f"{path}: unsupported format {payload.get('format')!r} v{payload.get('version')!r}"
        )
    nodes = tuple(
        TreeNode(f, t, l, r, tuple(counts)) for f, t, l, r, counts in payload["nodes"]
    )
    return DecisionTreeModel(
        nodes=nodes,
        max_depth=payload["max_depth"],
        feature_names=tuple(payload["feature_names"]),
        class_names=tuple(payload["class_names"]),
        training_meta=payload["training_meta"],
    )
