"""Quantile regression forests.

Regression trees retain all bootstrap observations in their leaves; the
forest turns a query point into nonnegative per-training-row weights that
average, across trees, the uniform weight over the leaf containing the
query. Those weights define the conditional mean and a weighted empirical
conditional CDF. A class-weighted Gini variant supports the categorical
forecast benchmarks.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .distributions import ForecastDistribution

MODE_QUANTILE = "regression_quantile"
MODE_CLASSIFIER = "classification"


@dataclass(frozen=True)
class ForestParams:
    n_tree: int = 500
    mtry: Optional[int] = None          # default: ceil(m / 3)
    min_node: int = 5                   # nodes smaller than this are not split
    bootstrap: bool = True
    master_seed: int = 0

    def validate(self, m: int) -> "ForestParams":
        if self.n_tree < 1:
            raise ValueError("n_tree must be >= 1")
        if self.min_node < 1:
            raise ValueError("min_node must be >= 1")
        mtry = self.mtry if self.mtry is not None else math.ceil(m / 3)
        if not 1 <= mtry <= m:
            raise ValueError(f"mtry must lie in [1, {m}]")
        return replace(self, mtry=mtry)


class Tree:
    """One grown tree: internal nodes split on (feature, threshold); leaves
    hold [lo, hi) slices into ``rows``, the sorted training-row ids that
    landed there (bootstrap multiplicity included)."""

    __slots__ = ("feat", "thr", "left", "right", "leaf_lo", "leaf_hi", "rows")

    def __init__(self, feat, thr, left, right, leaf_lo, leaf_hi, rows):
        self.feat = np.asarray(feat, np.int64)
        self.thr = np.asarray(thr, np.float64)
        self.left = np.asarray(left, np.int64)
        self.right = np.asarray(right, np.int64)
        self.leaf_lo = np.asarray(leaf_lo, np.int64)
        self.leaf_hi = np.asarray(leaf_hi, np.int64)
        self.rows = np.asarray(rows, np.int64)

    @property
    def n_nodes(self) -> int:
        return self.feat.size

    def leaf_for(self, x: np.ndarray) -> int:
        return int(_kernels.descend(x.reshape(1, -1), self.feat, self.thr,
                                    self.left, self.right)[0])

    def leaf_members(self, leaf: int) -> np.ndarray:
        return self.rows[self.leaf_lo[leaf]:self.leaf_hi[leaf]]


class ForestModel:
    """A fitted ensemble plus the retained training labels."""

    def __init__(self, trees: Sequence[Tree], y: np.ndarray, params: ForestParams,
                 mode: str = MODE_QUANTILE, column_names: Optional[list] = None,
                 classes: Optional[list] = None, class_weights: Optional[np.ndarray] = None,
                 leaf_probs: Optional[list] = None, importance_raw: Optional[np.ndarray] = None,
                 sub_models: Optional[list] = None):
        self.trees = list(trees)
        self.y = np.asarray(y, np.float64)
        self.params = params
        self.mode = mode
        self.column_names = list(column_names) if column_names else None
        self.classes = list(classes) if classes else None
        self.class_weights = None if class_weights is None else np.asarray(class_weights, float)
        self.leaf_probs = leaf_probs              # per tree: (n_nodes, K) array
        self.importance_raw = importance_raw
        self.sub_models = sub_models              # one-vs-rest decomposition
        self._cat = None

    @property
    def n_features(self) -> int:
        if self.column_names:
            return len(self.column_names)
        return int(max((t.feat.max() for t in self.trees if t.feat.size), default=-1)) + 1

    @property
    def n_train(self) -> int:
        return self.y.size

    def _concat(self):
        if self._cat is None:
            node_off = np.zeros(len(self.trees) + 1, np.int64)
            rows_off = np.zeros(len(self.trees) + 1, np.int64)
            for i, t in enumerate(self.trees):
                node_off[i + 1] = node_off[i] + t.n_nodes
                rows_off[i + 1] = rows_off[i] + t.rows.size
            self._cat = {
                "feat": np.concatenate([t.feat for t in self.trees]),
                "thr": np.concatenate([t.thr for t in self.trees]),
                "left": np.concatenate([t.left for t in self.trees]),
                "right": np.concatenate([t.right for t in self.trees]),
                "leaf_lo": np.concatenate([t.leaf_lo for t in self.trees]),
                "leaf_hi": np.concatenate([t.leaf_hi for t in self.trees]),
                "rows": np.concatenate([t.rows for t in self.trees]),
                "node_off": node_off,
                "rows_off": rows_off,
            }
        return self._cat


def _tree_seed(master_seed: int, tree_idx: int, stream: int) -> int:
    ss = np.random.SeedSequence(entropy=(int(master_seed) & ((1 << 64) - 1), tree_idx, stream))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _check_matrix(X: np.ndarray, y: np.ndarray) -> tuple:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-d")
    if X.shape[1] == 0:
        raise ValueError("no features")
    if X.shape[0] != y.size or X.shape[0] == 0:
        raise ValueError("X and y must align and be non-empty")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("non-finite values in training data")
    return X, y


def fit(X, y, params: ForestParams = ForestParams(),
        column_names: Optional[list] = None) -> ForestModel:
    """Grow a quantile regression forest.

    Each tree is grown on a bootstrap resample (n draws with replacement)
    under a per-tree seed derived from ``master_seed`` and the tree index,
    so any growth order or parallelism reproduces the same forest. Splits
    minimize total child sum-of-squared deviations over ``mtry`` candidate
    features resampled per node.
    """
    X, y = _check_matrix(X, y)
    n, m = X.shape
    params = params.validate(m)
    trees = []
    importance_raw = np.zeros(m)
    for t in range(params.n_tree):
        if params.bootstrap:
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=(int(params.master_seed) & ((1 << 64) - 1), t, 0)))
            rows = rng.integers(0, n, size=n)
        else:
            rows = np.arange(n, dtype=np.int64)
        out = _kernels.grow_regression(X, y, rows.astype(np.int64), params.mtry,
                                       params.min_node, _tree_seed(params.master_seed, t, 1))
        feat, thr, left, right, leaf_lo, leaf_hi, ordered, imp = out
        _kernels.sort_leaf_members(feat, leaf_lo, leaf_hi, ordered)
        trees.append(Tree(feat, thr, left, right, leaf_lo, leaf_hi, ordered))
        importance_raw += imp
    return ForestModel(trees, y, params, MODE_QUANTILE, column_names,
                       importance_raw=importance_raw)


def _check_query(model: ForestModel, Xq: np.ndarray) -> np.ndarray:
    Xq = np.ascontiguousarray(np.atleast_2d(np.asarray(Xq, np.float64)))
    if model.column_names is not None and Xq.shape[1] != len(model.column_names):
        raise ValueError(f"feature mismatch: model expects {len(model.column_names)} "
                         f"columns, got {Xq.shape[1]}")
    return Xq


def _sparse_weights(model: ForestModel, Xq: np.ndarray) -> tuple:
    cat = model._concat()
    leafs = _kernels.descend_forest(Xq, cat["feat"], cat["thr"], cat["left"],
                                    cat["right"], cat["node_off"])
    return _kernels.forest_member_weights(leafs, cat["node_off"], cat["rows_off"],
                                          cat["leaf_lo"], cat["leaf_hi"],
                                          cat["rows"], model.n_train)


def weights(model: ForestModel, x) -> np.ndarray:
    """Per-training-row forest weights for one query (dense, sums to 1)."""
    Xq = _check_query(model, x)
    indptr, indices, w = _sparse_weights(model, Xq)
    dense = np.zeros(model.n_train)
    dense[indices[indptr[0]:indptr[1]]] = w[indptr[0]:indptr[1]]
    return dense


def predict_cdf(model: ForestModel, x) -> ForecastDistribution:
    """Weighted empirical conditional distribution at one query point."""
    return predict_cdf_batch(model, x)[0]


def predict_cdf_batch(model: ForestModel, Xq) -> list:
    Xq = _check_query(model, Xq)
    indptr, indices, w = _sparse_weights(model, Xq)
    out = []
    for q in range(Xq.shape[0]):
        sl = slice(indptr[q], indptr[q + 1])
        out.append(ForecastDistribution(model.y[indices[sl]], w[sl]))
    return out


def quantile(dist: ForecastDistribution, tau: float) -> float:
    """Generalized inverse of the forecast CDF at level tau in (0, 1)."""
    return float(dist.quantile(tau))


def predict_mean(model: ForestModel, x) -> float:
    return float(predict_mean_batch(model, x)[0])


def predict_mean_batch(model: ForestModel, Xq) -> np.ndarray:
    Xq = _check_query(model, Xq)
    indptr, indices, w = _sparse_weights(model, Xq)
    sums = np.empty(Xq.shape[0])
    for q in range(Xq.shape[0]):
        sl = slice(indptr[q], indptr[q + 1])
        sums[q] = model.y[indices[sl]] @ w[sl]
    return sums


def sample_batch(model: ForestModel, Xq, rng: np.random.Generator) -> np.ndarray:
    """One conditional draw per query row: sample a tree uniformly, descend,
    then sample a leaf member uniformly (exactly the forest-weight mixture)."""
    Xq = _check_query(model, Xq)
    cat = model._concat()
    nq = Xq.shape[0]
    choice = rng.integers(0, len(model.trees), size=nq)
    u = rng.uniform(size=nq)
    rows = _kernels.sample_forest_rows(Xq, cat["feat"], cat["thr"], cat["left"],
                                       cat["right"], cat["node_off"], cat["rows_off"],
                                       cat["leaf_lo"], cat["leaf_hi"], cat["rows"],
                                       choice.astype(np.int64), u)
    return model.y[rows]


def importance(model: ForestModel) -> list:
    """(feature, score) pairs, descending, normalized to max = 1; the score
    is the total impurity decrease attributed to each split feature."""
    raw = model.importance_raw
    if raw is None:
        raise ValueError("model carries no importance accumulator")
    top = raw.max()
    scores = raw / top if top > 0 else raw
    names = model.column_names or [f"x{j}" for j in range(raw.size)]
    order = sorted(range(raw.size), key=lambda j: (-scores[j], j))
    return [(names[j], float(scores[j])) for j in order]


# ---------------------------------------------------------------------------
# Class-weighted classification

def fit_classifier(X, labels, params: ForestParams, class_weights,
                   classes: Optional[list] = None, binary_decomposition: bool = False,
                   column_names: Optional[list] = None) -> ForestModel:
    """Random-forest classifier with class-weighted Gini impurity.

    ``class_weights`` must sum to one; every listed class must appear in
    the training labels. With ``binary_decomposition`` a one-vs-rest forest
    is fitted per class and the positive-class probabilities renormalized.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if classes is None:
        classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    lut = {c: k for k, c in enumerate(classes)}
    present = set(labels.tolist())
    missing = [c for c in classes if c not in present]
    if missing:
        raise ValueError(f"classes absent from training data: {missing}")
    cw = np.asarray(class_weights, np.float64)
    if cw.size != len(classes) or np.any(cw < 0) or abs(cw.sum() - 1.0) > 1e-9:
        raise ValueError("class weights must be nonnegative and sum to 1")
    cls = np.array([lut[v] for v in labels.tolist()], np.int64)

    if binary_decomposition:
        subs = []
        for k, c in enumerate(classes):
            w_pos = cw[k]
            w_bin = np.array([1.0 - w_pos, w_pos])
            sub = _fit_classifier_single(X, (cls == k).astype(np.int64), 2, w_bin,
                                         replace(params, master_seed=params.master_seed + 7919 * (k + 1)),
                                         column_names)
            subs.append(sub)
        model = ForestModel([], np.zeros(0), params.validate(X.shape[1]), MODE_CLASSIFIER,
                            column_names, classes=classes, class_weights=cw, sub_models=subs)
        return model
    model = _fit_classifier_single(X, cls, len(classes), cw, params, column_names)
    model.classes = list(classes)
    return model


def _fit_classifier_single(X, cls, n_classes, class_weights, params, column_names):
    n, m = X.shape
    params = params.validate(m)
    row_weight = class_weights[cls]
    trees = []
    leaf_probs = []
    for t in range(params.n_tree):
        if params.bootstrap:
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=(int(params.master_seed) & ((1 << 64) - 1), t, 0)))
            rows = rng.integers(0, n, size=n)
        else:
            rows = np.arange(n, dtype=np.int64)
        out = _kernels.grow_classification(X, cls, row_weight, rows.astype(np.int64),
                                           n_classes, params.mtry, params.min_node,
                                           _tree_seed(params.master_seed, t, 1))
        feat, thr, left, right, leaf_lo, leaf_hi, ordered = out
        _kernels.sort_leaf_members(feat, leaf_lo, leaf_hi, ordered)
        tree = Tree(feat, thr, left, right, leaf_lo, leaf_hi, ordered)
        trees.append(tree)
        probs = np.zeros((tree.n_nodes, n_classes))
        for node in range(tree.n_nodes):
            if tree.feat[node] < 0:
                members = tree.leaf_members(node)
                wc = np.bincount(cls[members], weights=row_weight[members],
                                 minlength=n_classes)
                probs[node] = wc / wc.sum()
        leaf_probs.append(probs)
    model = ForestModel(trees, cls.astype(float), params, MODE_CLASSIFIER, column_names,
                        class_weights=class_weights, leaf_probs=leaf_probs)
    return model


def predict_proba(model: ForestModel, x) -> np.ndarray:
    return predict_proba_batch(model, x)[0]


def predict_proba_batch(model: ForestModel, Xq) -> np.ndarray:
    """Class probabilities averaged over trees (rows sum to 1)."""
    if model.mode != MODE_CLASSIFIER:
        raise ValueError("not a classifier model")
    Xq = _check_query(model, Xq)
    if model.sub_models is not None:
        pos = np.column_stack([predict_proba_batch(s, Xq)[:, 1] for s in model.sub_models])
        total = pos.sum(axis=1, keepdims=True)
        total[total == 0] = 1.0
        return pos / total
    cat = model._concat()
    leafs = _kernels.descend_forest(Xq, cat["feat"], cat["thr"], cat["left"],
                                    cat["right"], cat["node_off"])
    nq = Xq.shape[0]
    K = model.leaf_probs[0].shape[1]
    acc = np.zeros((nq, K))
    for t, probs in enumerate(model.leaf_probs):
        acc += probs[leafs[:, t]]
    return acc / len(model.trees)


# ---------------------------------------------------------------------------
# Persistence

def _model_arrays(model: ForestModel) -> dict:
    meta = {
        "mode": model.mode,
        "params": {"n_tree": model.params.n_tree, "mtry": model.params.mtry,
                   "min_node": model.params.min_node, "bootstrap": model.params.bootstrap,
                   "master_seed": model.params.master_seed},
        "column_names": model.column_names,
        "classes": model.classes,
        "n_sub_models": len(model.sub_models) if model.sub_models else 0,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
              "y": model.y}
    if model.class_weights is not None:
        arrays["class_weights"] = model.class_weights
    if model.trees:
        for k, v in model._concat().items():
            arrays[f"cat_{k}"] = v
    if model.importance_raw is not None:
        arrays["importance_raw"] = model.importance_raw
    if model.leaf_probs is not None:
        arrays["leaf_probs"] = np.concatenate(model.leaf_probs, axis=0)
    for i, sub in enumerate(model.sub_models or ()):
        buf = io.BytesIO()
        np.savez_compressed(buf, **_model_arrays(sub))
        arrays[f"sub_{i}"] = np.frombuffer(buf.getvalue(), dtype=np.uint8)
    return arrays


def save_model(model: ForestModel, path) -> None:
    """Self-describing .npz archive; loading reproduces predictions bit-exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez_compressed(fh, **_model_arrays(model))


def _split_trees(cat: dict) -> list:
    trees = []
    node_off = cat["node_off"]
    rows_off = cat["rows_off"]
    for t in range(node_off.size - 1):
        ns = slice(node_off[t], node_off[t + 1])
        rs = slice(rows_off[t], rows_off[t + 1])
        trees.append(Tree(cat["feat"][ns], cat["thr"][ns], cat["left"][ns],
                          cat["right"][ns], cat["leaf_lo"][ns], cat["leaf_hi"][ns],
                          cat["rows"][rs]))
    return trees


def load_model(source) -> ForestModel:
    """Load a model saved by :func:`save_model` (path or raw bytes)."""
    if isinstance(source, (bytes, bytearray)):
        archive = np.load(io.BytesIO(bytes(source)), allow_pickle=False)
    else:
        archive = np.load(source, allow_pickle=False)
    meta = json.loads(bytes(archive["meta"]).decode())
    params = ForestParams(**meta["params"])
    trees = []
    if any(k.startswith("cat_") for k in archive.files):
        cat = {k[4:]: archive[k] for k in archive.files if k.startswith("cat_")}
        trees = _split_trees(cat)
    leaf_probs = None
    if "leaf_probs" in archive.files and trees:
        flat = archive["leaf_probs"]
        leaf_probs = []
        off = 0
        for t in trees:
            leaf_probs.append(flat[off:off + t.n_nodes])
            off += t.n_nodes
    sub_models = None
    if meta["n_sub_models"]:
        sub_models = [load_model(bytes(archive[f"sub_{i}"].tobytes()))
                      for i in range(meta["n_sub_models"])]
    return ForestModel(trees, archive["y"], params, meta["mode"],
                       column_names=meta["column_names"], classes=meta["classes"],
                       class_weights=archive["class_weights"] if "class_weights" in archive.files else None,
                       leaf_probs=leaf_probs,
                       importance_raw=archive["importance_raw"] if "importance_raw" in archive.files else None,
                       sub_models=sub_models)
