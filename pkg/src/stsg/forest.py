"""Random forests over per-bag PCA-reduced feature vectors.

Training draws one bootstrap bag per tree, PCA-projects the bag's leading
feature block (trailing static/location blocks bypass the projection), and
grows a binary tree with per-node feature bagging.  Split search minimizes
weighted Gini impurity (classification) or weighted variance (regression)
over the sampled feature subset, breaking ties toward the lowest feature
index and threshold.  Prediction averages normalized leaf class histograms
(argmax, ties to the lowest class id) or leaf means.

Feature standardization is a pipeline concern: scattering-moment blocks are
z-scored over the training set (see features.Standardizer) before they reach
the forest, while raw feature spaces train as-is.

Every random draw comes from a per-tree generator derived from the master
seed as SeedSequence([seed, tree_index]), so serial and parallel training
produce identical forests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .features import (
    FeatureMatrix,
    FeatureVector,
    PcaModel,
    Standardizer,
    fit_standardizer,
    pca_fit,
    pca_project,
)

__all__ = [
    "RfConfig",
    "DecisionTree",
    "Forest",
    "OobCurve",
    "CvResult",
    "train_rf",
    "predict",
    "predict_batch",
    "oob_error",
    "staged_validation_errors",
    "cross_validate",
    "make_folds",
    "evaluate",
    "save_forest",
    "load_forest",
    "forest_to_json",
    "forest_from_json",
]

FOREST_FORMAT = "stsg-forest v1"


class ForestError(ValueError):
    """Invalid training or prediction input."""


@dataclass(frozen=True)
class RfConfig:
    n_trees: int = 200
    max_depth: int | None = None
    min_leaf: int | None = None            # default 1 classify / 5 regress
    features_per_split: int | None = None  # default ceil(sqrt(d)) / ceil(d/3)
    pca_dim: int | None = None             # default min(64, leading block)
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ForestError("n_trees must be >= 1")
        if self.seed < 0:
            raise ForestError("seed must be non-negative")


def _tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tree_index]))


# ---------------------------------------------------------------------------
# decision trees
# ---------------------------------------------------------------------------

@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    payload: np.ndarray | None = None  # class counts or mean response

    @property
    def is_leaf(self) -> bool:
        return self.payload is not None


@dataclass
class DecisionTree:
    root: _Node
    max_depth: int | None
    min_leaf: int

    def apply(self, row: np.ndarray) -> np.ndarray:
        node = self.root
        while not node.is_leaf:
            node = node.left if row[node.feature] < node.threshold else node.right
        return node.payload


def _best_split(x: np.ndarray, y: np.ndarray, feat_ids, min_leaf: int,
                classify: bool, n_classes: int):
    """Exhaustive threshold scan over the given features; returns
    (cost, feature, threshold) or None when no valid split exists."""
    n = x.shape[0]
    best = None
    for f in feat_ids:
        col = x[:, f]
        order = np.argsort(col, kind="stable")
        sv = col[order]
        valid = np.nonzero(sv[:-1] < sv[1:])[0]
        valid = valid[(valid + 1 >= min_leaf) & (n - valid - 1 >= min_leaf)]
        if valid.size == 0:
            continue
        nl = (valid + 1).astype(float)
        nr = n - nl
        if classify:
            hot = np.zeros((n, n_classes), dtype=np.int64)
            hot[np.arange(n), y[order]] = 1
            prefix = np.cumsum(hot, axis=0)
            cl = prefix[valid].astype(float)
            cr = (prefix[-1] - prefix[valid]).astype(float)
            gl = 1.0 - ((cl / nl[:, None]) ** 2).sum(axis=1)
            gr = 1.0 - ((cr / nr[:, None]) ** 2).sum(axis=1)
            cost = (nl * gl + nr * gr) / n
        else:
            yy = y[order]
            s1 = np.cumsum(yy, axis=0)
            s2 = np.cumsum(yy * yy, axis=0)
            sse_l = (s2[valid] - s1[valid] ** 2 / nl[:, None]).sum(axis=1)
            sse_r = ((s2[-1] - s2[valid])
                     - (s1[-1] - s1[valid]) ** 2 / nr[:, None]).sum(axis=1)
            cost = (sse_l + sse_r) / n
        i = int(np.argmin(cost))
        c = float(cost[i])
        if best is None or c < best[0]:
            thr = float((sv[valid[i]] + sv[valid[i] + 1]) / 2.0)
            best = (c, int(f), thr)
    return best


def _grow_tree(x: np.ndarray, y: np.ndarray, rng: np.random.Generator,
               classify: bool, n_classes: int, max_depth: int | None,
               min_leaf: int, m_try: int) -> DecisionTree:
    p = x.shape[1]

    def leaf(idx):
        if classify:
            return _Node(payload=np.bincount(y[idx], minlength=n_classes)
                         .astype(float))
        return _Node(payload=y[idx].mean(axis=0))

    def rec(idx, depth):
        if (len(idx) < 2 * min_leaf
                or (max_depth is not None and depth >= max_depth)
                or _pure(y[idx], classify)):
            return leaf(idx)
        feats = np.sort(rng.choice(p, size=min(m_try, p), replace=False))
        best = _best_split(x[idx], y[idx], feats, min_leaf, classify, n_classes)
        if best is None:
            return leaf(idx)
        _, f, thr = best
        mask = x[idx, f] < thr
        node = _Node(feature=f, threshold=thr)
        node.left = rec(idx[mask], depth + 1)
        node.right = rec(idx[~mask], depth + 1)
        return node

    root = rec(np.arange(x.shape[0]), 0)
    return DecisionTree(root, max_depth, min_leaf)


def _pure(y: np.ndarray, classify: bool) -> bool:
    if classify:
        return bool(np.all(y == y[0]))
    return bool(np.all(y == y[0:1]))


# ---------------------------------------------------------------------------
# forest
# ---------------------------------------------------------------------------

@dataclass
class _TreeBundle:
    tree: DecisionTree
    bag: np.ndarray
    pca: PcaModel

    def transform(self, x: np.ndarray) -> np.ndarray:
        width = self.pca.mean.shape[0]
        proj = pca_project(self.pca, x[..., :width])
        return np.concatenate([proj, x[..., width:]], axis=-1)


@dataclass
class Forest:
    config: RfConfig
    task: str                      # "classify" | "regress"
    feature_length: int
    pca_len: int
    classes: tuple | None          # classification label vocabulary
    y_dim: int                     # regression target width
    bundles: list[_TreeBundle] = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return len(self.bundles)


def _as_matrix(features) -> tuple[np.ndarray, int]:
    if isinstance(features, FeatureMatrix):
        return features.values, features.pca_block_len
    arr = np.asarray(features, dtype=float)
    if arr.ndim != 2:
        raise ForestError(f"features must be 2-d, got shape {arr.shape}")
    return arr, arr.shape[1]


def _encode_labels(labels, task: str):
    if task == "classify":
        classes = tuple(sorted(set(labels)))
        lookup = {c: i for i, c in enumerate(classes)}
        return np.array([lookup[v] for v in labels]), classes, 1
    y = np.asarray(labels, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    return y, None, y.shape[1]


def train_rf(features, labels, cfg: RfConfig, task: str = "classify",
             pca_len: int | None = None, n_jobs: int = 1) -> Forest:
    """Fit the tree ensemble; features are precomputed vectors (rows).

    Trees may build in parallel worker threads: every tree draws from its own
    derived generator, so the result is identical for any n_jobs.
    """
    if task not in ("classify", "regress"):
        raise ForestError(f"unknown task {task!r}")
    x, default_len = _as_matrix(features)
    n, p = x.shape
    if n < 2:
        raise ForestError("need at least 2 training samples")
    if len(labels) != n:
        raise ForestError("labels length does not match features")
    pca_len = default_len if pca_len is None else pca_len
    if not 1 <= pca_len <= p:
        raise ForestError(f"pca block length {pca_len} out of range")
    y, classes, y_dim = _encode_labels(labels, task)
    classify = task == "classify"
    n_classes = len(classes) if classify else 0
    min_leaf = cfg.min_leaf if cfg.min_leaf is not None \
        else (1 if classify else 5)
    d = min(cfg.pca_dim or 64, pca_len, n - 1)

    def build_one(k: int) -> _TreeBundle:
        rng = _tree_rng(cfg.seed, k)
        bag = rng.integers(0, n, size=n)
        xb = x[bag]
        pca = pca_fit(xb[:, :pca_len], d)
        train_x = np.concatenate(
            [pca_project(pca, xb[:, :pca_len]), xb[:, pca_len:]], axis=1)
        d_total = train_x.shape[1]
        m_try = cfg.features_per_split if cfg.features_per_split is not None \
            else (math.ceil(math.sqrt(d_total)) if classify
                  else math.ceil(d_total / 3))
        tree = _grow_tree(train_x, y[bag], rng, classify, n_classes,
                          cfg.max_depth, min_leaf, max(1, m_try))
        return _TreeBundle(tree, bag, pca)

    forest = Forest(cfg, task, p, pca_len, classes, y_dim)
    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            forest.bundles.extend(pool.map(build_one, range(cfg.n_trees)))
    else:
        forest.bundles.extend(build_one(k) for k in range(cfg.n_trees))
    return forest


def _tree_votes(forest: Forest, bundle: _TreeBundle, x: np.ndarray) -> np.ndarray:
    z = bundle.transform(x)
    out = np.empty((x.shape[0], len(forest.classes))
                   if forest.task == "classify" else (x.shape[0], forest.y_dim))
    for i in range(x.shape[0]):
        payload = bundle.tree.apply(z[i])
        if forest.task == "classify":
            out[i] = payload / payload.sum()
        else:
            out[i] = payload
    return out


def _check_rows(forest: Forest, x) -> np.ndarray:
    if isinstance(x, (FeatureMatrix, FeatureVector)):
        arr = x.values
    else:
        arr = np.asarray(x, dtype=float)
    rows = arr[None, :] if arr.ndim == 1 else arr
    if rows.shape[1] != forest.feature_length:
        raise ForestError(
            f"feature length {rows.shape[1]} does not match trained "
            f"{forest.feature_length}")
    return rows


def predict_batch(forest: Forest, x) -> np.ndarray | list:
    rows = _check_rows(forest, x)
    if forest.task == "classify":
        votes = np.zeros((rows.shape[0], len(forest.classes)))
        for bundle in forest.bundles:
            votes += _tree_votes(forest, bundle, rows)
        codes = np.argmax(votes, axis=1)
        return [forest.classes[c] for c in codes]
    acc = np.zeros((rows.shape[0], forest.y_dim))
    for bundle in forest.bundles:
        acc += _tree_votes(forest, bundle, rows)
    acc /= forest.n_trees
    return acc[:, 0] if forest.y_dim == 1 else acc


def predict(forest: Forest, x):
    """Single-vector prediction: label (classify) or scalar/vector (regress)."""
    return predict_batch(forest, x)[0]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(forest: Forest, features, labels) -> float:
    """Task metric: misclassification rate, or mean Euclidean error."""
    rows = _check_rows(forest, features)
    pred = predict_batch(forest, rows)
    if forest.task == "classify":
        return float(np.mean([p != t for p, t in zip(pred, labels)]))
    y = np.asarray(labels, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    p = np.asarray(pred)
    if p.ndim == 1:
        p = p[:, None]
    return float(np.mean(np.linalg.norm(p - y, axis=1)))


@dataclass(frozen=True)
class OobCurve:
    errors: np.ndarray        # error of the first-m ensemble, m = 1..T
    covered: np.ndarray       # samples with at least one vote at each m
    never_oob: int            # samples in every bag of the full forest


def _staged_errors(forest: Forest, rows: np.ndarray, labels,
                   masks: list[np.ndarray]) -> OobCurve:
    n = rows.shape[0]
    classify = forest.task == "classify"
    if classify:
        lookup = {c: i for i, c in enumerate(forest.classes)}
        truth = np.array([lookup[v] for v in labels])
        votes = np.zeros((n, len(forest.classes)))
    else:
        truth = np.asarray(labels, dtype=float)
        if truth.ndim == 1:
            truth = truth[:, None]
        votes = np.zeros((n, forest.y_dim))
    counts = np.zeros(n, dtype=int)
    errors, covered = [], []
    for bundle, mask in zip(forest.bundles, masks):
        if np.any(mask):
            votes[mask] += _tree_votes(forest, bundle, rows[mask])
            counts[mask] += 1
        have = counts > 0
        covered.append(int(have.sum()))
        if not np.any(have):
            errors.append(np.nan)
        elif classify:
            pred = np.argmax(votes[have], axis=1)
            errors.append(float(np.mean(pred != truth[have])))
        else:
            pred = votes[have] / counts[have, None]
            errors.append(float(np.mean(
                np.linalg.norm(pred - truth[have], axis=1))))
    return OobCurve(np.array(errors), np.array(covered),
                    int(np.sum(counts == 0)))


def oob_error(forest: Forest, features, labels) -> OobCurve:
    """Out-of-bag error of the first m trees, for every m up to the forest size.

    features/labels must be the training set the bags were drawn from.
    """
    rows = _check_rows(forest, features)
    n = rows.shape[0]
    if forest.bundles and len(forest.bundles[0].bag) != n:
        raise ForestError(
            f"out-of-bag evaluation needs the {len(forest.bundles[0].bag)} "
            f"training samples, got {n}")
    masks = []
    for bundle in forest.bundles:
        in_bag = np.zeros(n, dtype=bool)
        in_bag[bundle.bag] = True
        masks.append(~in_bag)
    return _staged_errors(forest, rows, labels, masks)


def staged_validation_errors(forest: Forest, features, labels) -> np.ndarray:
    """Held-out error of the first-m sub-ensembles, m = 1..n_trees."""
    rows = _check_rows(forest, features)
    every = [np.ones(rows.shape[0], dtype=bool) for _ in forest.bundles]
    return _staged_errors(forest, rows, labels, every).errors


# ---------------------------------------------------------------------------
# cross validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CvResult:
    mean_error: float
    std_error: float
    fold_errors: tuple[float, ...]


def make_folds(labels, k: int, task: str, seed: int) -> list[np.ndarray]:
    """Stratified folds for classification, shuffled contiguous chunks for
    regression; deterministic in the seed."""
    n = len(labels)
    if k < 2:
        raise ForestError("need at least 2 folds")
    if n < k:
        raise ForestError("fewer samples than folds")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 104729]))
    folds: list[list[int]] = [[] for _ in range(k)]
    if task == "classify":
        values = np.asarray(labels, dtype=object)
        pointer = 0
        for cls in sorted(set(labels)):
            idx = np.nonzero(values == cls)[0]
            if idx.size < k:
                raise ForestError(
                    f"class {cls!r} has {idx.size} samples, fewer than {k} folds")
            idx = idx[rng.permutation(idx.size)]
            for i in idx:
                folds[pointer % k].append(int(i))
                pointer += 1
    else:
        order = rng.permutation(n)
        bounds = np.linspace(0, n, k + 1).astype(int)
        for f in range(k):
            folds[f] = [int(i) for i in order[bounds[f]:bounds[f + 1]]]
    return [np.array(sorted(f), dtype=int) for f in folds]


def cross_validate(features, labels, cfg: RfConfig, k: int = 5,
                   task: str = "classify", pca_len: int | None = None,
                   standardize_block: bool = False, n_jobs: int = 1) -> CvResult:
    """k-fold error of the full train/predict pipeline; deterministic.

    With standardize_block the leading feature block is z-scored per fold
    using the training split's statistics (the treatment scattering-moment
    blocks get before PCA).
    """
    x, default_len = _as_matrix(features)
    block = pca_len if pca_len is not None else default_len
    folds = make_folds(labels, k, task, cfg.seed)
    labels_arr = list(labels)
    errors = []
    for f, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(x.shape[0]), test_idx)
        fold_seed = int(np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 15485863, f])).integers(2 ** 31))
        fold_cfg = replace(cfg, seed=fold_seed)
        x_train, x_test = x[train_idx], x[test_idx]
        if standardize_block:
            std = fit_standardizer(x_train, block)
            x_train, x_test = std.apply(x_train), std.apply(x_test)
        forest = train_rf(x_train, [labels_arr[i] for i in train_idx],
                          fold_cfg, task=task, pca_len=block, n_jobs=n_jobs)
        errors.append(evaluate(forest, x_test,
                               [labels_arr[i] for i in test_idx]))
    arr = np.array(errors)
    std_err = float(arr.std(ddof=1)) if len(errors) > 1 else 0.0
    return CvResult(float(arr.mean()), std_err, tuple(float(e) for e in errors))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _node_to_obj(node: _Node):
    if node.is_leaf:
        return {"leaf": [float(v) for v in np.atleast_1d(node.payload)]}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_obj(node.left),
        "right": _node_to_obj(node.right),
    }


def _node_from_obj(obj) -> _Node:
    if "leaf" in obj:
        return _Node(payload=np.array(obj["leaf"], dtype=float))
    node = _Node(feature=int(obj["feature"]), threshold=float(obj["threshold"]))
    node.left = _node_from_obj(obj["left"])
    node.right = _node_from_obj(obj["right"])
    return node


def forest_to_json(forest: Forest) -> str:
    cfg = forest.config
    obj = {
        "format": FOREST_FORMAT,
        "task": forest.task,
        "feature_length": forest.feature_length,
        "pca_len": forest.pca_len,
        "classes": list(forest.classes) if forest.classes else None,
        "y_dim": forest.y_dim,
        "config": {
            "n_trees": cfg.n_trees,
            "max_depth": cfg.max_depth,
            "min_leaf": cfg.min_leaf,
            "features_per_split": cfg.features_per_split,
            "pca_dim": cfg.pca_dim,
            "seed": cfg.seed,
        },
        "trees": [
            {
                "bag": [int(i) for i in b.bag],
                "pca": {
                    "mean": [float(v) for v in b.pca.mean],
                    "components": [[float(v) for v in row]
                                   for row in b.pca.components],
                    "explained_variance": [float(v)
                                           for v in b.pca.explained_variance],
                    "degenerate": b.pca.degenerate,
                },
                "nodes": _node_to_obj(b.tree.root),
            }
            for b in forest.bundles
        ],
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def forest_from_json(text: str) -> Forest:
    obj = json.loads(text)
    if obj.get("format") != FOREST_FORMAT:
        raise ForestError(f"unsupported forest format {obj.get('format')!r}")
    cfg = RfConfig(**obj["config"])
    forest = Forest(cfg, obj["task"], int(obj["feature_length"]),
                    int(obj["pca_len"]),
                    tuple(obj["classes"]) if obj["classes"] else None,
                    int(obj["y_dim"]))
    min_leaf = cfg.min_leaf if cfg.min_leaf is not None \
        else (1 if obj["task"] == "classify" else 5)
    for t in obj["trees"]:
        pca = PcaModel(np.array(t["pca"]["mean"]),
                       np.array(t["pca"]["components"]),
                       np.array(t["pca"]["explained_variance"]),
                       bool(t["pca"]["degenerate"]))
        tree = DecisionTree(_node_from_obj(t["nodes"]), cfg.max_depth, min_leaf)
        forest.bundles.append(_TreeBundle(
            tree, np.array(t["bag"], dtype=int), pca))
    return forest


def save_forest(path, forest: Forest) -> None:
    with open(path, "w") as fh:
        fh.write(forest_to_json(forest))
        fh.write("\n")


def load_forest(path) -> Forest:
    with open(path) as fh:
        return forest_from_json(fh.read())
