import numpy as np
import pytest

from stsg.forest import (
    CvResult,
    ForestError,
    RfConfig,
    _best_split,
    cross_validate,
    evaluate,
    forest_from_json,
    forest_to_json,
    load_forest,
    make_folds,
    oob_error,
    predict,
    predict_batch,
    save_forest,
    staged_validation_errors,
    train_rf,
)


def blobs_dataset(n_per_class=100, sep=10.0, seed=0):
    """Two Gaussian blobs separated by sep standard deviations."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_per_class, 2))
    b = rng.normal(size=(n_per_class, 2)) + np.array([sep, 0.0])
    x = np.vstack([a, b])
    y = ["a"] * n_per_class + ["b"] * n_per_class
    return x, y


def xor_dataset(n=400, seed=1):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 0], [0, 4], [4, 0], [4, 4]], dtype=float)
    labels_per_center = ["p", "q", "q", "p"]
    x, y = [], []
    for i in range(n):
        c = i % 4
        x.append(centers[c] + 0.4 * rng.normal(size=2))
        y.append(labels_per_center[c])
    return np.array(x), y


# ---------------------------------------------------------------------------
# split search
# ---------------------------------------------------------------------------

def exhaustive_split_oracle(x, y, feats, min_leaf, classify, n_classes):
    """Plain-loop scan over every feature and midpoint threshold."""
    n = x.shape[0]
    best = None
    for f in feats:
        vals = np.unique(x[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = (lo + hi) / 2.0
            left = x[:, f] < thr
            nl, nr = int(left.sum()), int(n - left.sum())
            if nl < min_leaf or nr < min_leaf:
                continue
            if classify:
                def gini(sub):
                    counts = np.bincount(y[sub], minlength=n_classes)
                    probs = counts / counts.sum()
                    return 1.0 - float((probs ** 2).sum())
                cost = (nl * gini(left) + nr * gini(~left)) / n
            else:
                def sse(sub):
                    yy = y[sub]
                    return float(((yy - yy.mean(axis=0)) ** 2).sum())
                cost = (sse(left) + sse(~left)) / n
            if best is None or cost < best[0] - 1e-15:
                best = (cost, f, thr)
    return best


def test_split_optimality_classification():
    rng = np.random.default_rng(5)
    for trial in range(20):
        n = int(rng.integers(8, 50))
        x = rng.normal(size=(n, 4))
        y = rng.integers(0, 3, size=n)
        feats = list(range(4))
        got = _best_split(x, y, feats, 1, True, 3)
        want = exhaustive_split_oracle(x, y, feats, 1, True, 3)
        if want is None:
            assert got is None
            continue
        assert got is not None
        assert got[0] <= want[0] + 1e-12


def test_split_optimality_regression():
    rng = np.random.default_rng(6)
    for trial in range(20):
        n = int(rng.integers(10, 50))
        x = rng.normal(size=(n, 3))
        y = rng.normal(size=(n, 1))
        feats = list(range(3))
        got = _best_split(x, y, feats, 2, False, 0)
        want = exhaustive_split_oracle(x, y, feats, 2, False, 0)
        assert got is not None and want is not None
        assert got[0] <= want[0] + 1e-12


def test_split_tie_breaks_to_lowest_feature_and_threshold():
    # Duplicated columns force exact cost ties across features.
    x = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    y = np.array([0, 0, 1, 1])
    got = _best_split(x, y, [0, 1], 1, True, 2)
    assert got[1] == 0
    assert got[2] == 1.5


# ---------------------------------------------------------------------------
# training and prediction
# ---------------------------------------------------------------------------

def test_identical_labels_constant_prediction():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(30, 4))
    forest = train_rf(x, ["only"] * 30, RfConfig(n_trees=10, seed=3))
    assert predict_batch(forest, x) == ["only"] * 30
    assert evaluate(forest, x, ["only"] * 30) == 0.0
    curve = oob_error(forest, x, ["only"] * 30)
    valid = curve.errors[~np.isnan(curve.errors)]
    assert np.all(valid == 0.0)


def test_blobs_cv_perfect():
    x, y = blobs_dataset(100, sep=10.0, seed=11)
    res = cross_validate(x, y, RfConfig(n_trees=50, seed=5), k=5)
    assert res.mean_error == 0.0


def test_seeded_determinism_bit_exact():
    x, y = blobs_dataset(40, sep=4.0, seed=13)
    cfg = RfConfig(n_trees=20, seed=99)
    f1 = train_rf(x, y, cfg)
    f2 = train_rf(x, y, cfg)
    assert forest_to_json(f1) == forest_to_json(f2)
    assert predict_batch(f1, x) == predict_batch(f2, x)


def test_parallel_training_identical_to_serial():
    x, y = blobs_dataset(40, sep=4.0, seed=17)
    cfg = RfConfig(n_trees=16, seed=5)
    serial = train_rf(x, y, cfg)
    threaded = train_rf(x, y, cfg, n_jobs=4)
    assert forest_to_json(serial) == forest_to_json(threaded)


def test_pure_leaf_single_tree():
    x = np.array([[0.0], [0.0], [10.0], [10.0]])
    y = ["lo", "lo", "hi", "hi"]
    forest = train_rf(x, y, RfConfig(n_trees=1, seed=0, pca_dim=1))
    assert predict(forest, np.array([-1.0])) == "lo"
    assert predict(forest, np.array([11.0])) == "hi"


def test_regression_average_of_trees():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(60, 3))
    y = 2.0 * x[:, 0] + 0.1 * rng.normal(size=60)
    forest = train_rf(x, y, RfConfig(n_trees=2, seed=21), task="regress")
    v = np.asarray(predict_batch(forest, x[:5]))
    per_tree = []
    for bundle in forest.bundles:
        z = bundle.transform(x[:5])
        per_tree.append([bundle.tree.apply(r)[0] for r in z])
    np.testing.assert_allclose(v, np.mean(per_tree, axis=0), rtol=1e-12)


def test_xor_held_out_accuracy():
    x, y = xor_dataset(400, seed=23)
    train_idx = np.arange(0, 300)
    test_idx = np.arange(300, 400)
    forest = train_rf(x[train_idx], [y[i] for i in train_idx],
                      RfConfig(n_trees=200, seed=31))
    err = evaluate(forest, x[test_idx], [y[i] for i in test_idx])
    assert 1.0 - err >= 0.95


def test_empty_input_rejected():
    with pytest.raises(ForestError):
        train_rf(np.zeros((1, 2)), ["a"], RfConfig(n_trees=1))
    with pytest.raises(ForestError):
        train_rf(np.zeros((4, 2)), ["a"] * 3, RfConfig(n_trees=1))


def test_prediction_length_mismatch():
    x, y = blobs_dataset(10, seed=3)
    forest = train_rf(x, y, RfConfig(n_trees=2, seed=1))
    with pytest.raises(ForestError):
        predict(forest, np.zeros(5))


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

def test_bagging_unique_fraction():
    rng_check = []
    x, y = blobs_dataset(100, seed=29)
    forest = train_rf(x, y, RfConfig(n_trees=200, seed=43))
    for bundle in forest.bundles:
        assert len(bundle.bag) == 200
        rng_check.append(len(np.unique(bundle.bag)) / 200.0)
    assert abs(np.mean(rng_check) - (1 - 1 / np.e)) < 0.05


def test_regression_scale_equivariance():
    rng = np.random.default_rng(31)
    x = rng.normal(size=(50, 3))
    y = x[:, 0] + 0.1 * rng.normal(size=50)
    cfg = RfConfig(n_trees=10, seed=7)
    f1 = train_rf(x, y, cfg, task="regress")
    f2 = train_rf(x, 5.0 * y, cfg, task="regress")
    p1 = np.asarray(predict_batch(f1, x))
    p2 = np.asarray(predict_batch(f2, x))
    np.testing.assert_allclose(p2, 5.0 * p1, rtol=1e-10)


def test_class_relabeling_permutes_predictions():
    x, y = blobs_dataset(40, sep=6.0, seed=37)
    cfg = RfConfig(n_trees=20, seed=11)
    f1 = train_rf(x, y, cfg)
    swap = {"a": "z", "b": "y"}
    f2 = train_rf(x, [swap[v] for v in y], cfg)
    p1 = predict_batch(f1, x)
    p2 = predict_batch(f2, x)
    assert [swap[v] for v in p1] == p2


def test_tree_deletion_leaves_others_unchanged():
    x, y = blobs_dataset(30, sep=3.0, seed=41)
    forest = train_rf(x, y, RfConfig(n_trees=5, seed=13))
    import copy
    probe = x[:7]
    before = [predict_batch(_single_tree(forest, k), probe)
              for k in range(forest.n_trees)]
    reduced = copy.copy(forest)
    reduced.bundles = forest.bundles[:2] + forest.bundles[3:]
    after = [predict_batch(_single_tree(reduced, k), probe)
             for k in range(reduced.n_trees)]
    kept = before[:2] + before[3:]
    assert after == kept


def _single_tree(forest, k):
    import copy
    one = copy.copy(forest)
    one.bundles = [forest.bundles[k]]
    return one


# ---------------------------------------------------------------------------
# out-of-bag curve
# ---------------------------------------------------------------------------

def test_oob_curve_shape_and_trend():
    x, y = blobs_dataset(100, sep=10.0, seed=47)
    forest = train_rf(x, y, RfConfig(n_trees=60, seed=17))
    curve = oob_error(forest, x, y)
    assert len(curve.errors) == 60
    assert len(curve.covered) == 60
    assert curve.errors[-1] <= curve.errors[0]
    assert curve.never_oob == 0  # overwhelmingly likely at 60 trees
    assert curve.covered[-1] == 200


def test_oob_requires_training_set():
    x, y = blobs_dataset(20, seed=53)
    forest = train_rf(x, y, RfConfig(n_trees=5, seed=19))
    with pytest.raises(ForestError):
        oob_error(forest, x[:10], y[:10])


def test_staged_validation_errors_monotone_data():
    x, y = blobs_dataset(50, sep=10.0, seed=59)
    forest = train_rf(x[:80], y[:80] if isinstance(y, list) else y,
                      RfConfig(n_trees=10, seed=23))
    errors = staged_validation_errors(forest, x[80:], y[80:])
    assert len(errors) == 10
    assert errors[-1] == 0.0


# ---------------------------------------------------------------------------
# cross validation folds
# ---------------------------------------------------------------------------

def test_fold_sizes_disjoint_cover():
    labels = ["a"] * 50 + ["b"] * 50
    folds = make_folds(labels, 5, "classify", seed=3)
    sizes = [len(f) for f in folds]
    assert sizes == [20] * 5
    all_idx = np.concatenate(folds)
    assert len(np.unique(all_idx)) == 100


def test_fold_stratification_within_one():
    labels = ["a"] * 23 + ["b"] * 31 + ["c"] * 16
    folds = make_folds(labels, 5, "classify", seed=5)
    arr = np.asarray(labels, dtype=object)
    for cls, total in (("a", 23), ("b", 31), ("c", 16)):
        per_fold = [int(np.sum(arr[f] == cls)) for f in folds]
        assert max(per_fold) - min(per_fold) <= 1


def test_folds_deterministic():
    labels = ["a"] * 40 + ["b"] * 40
    f1 = make_folds(labels, 4, "classify", seed=7)
    f2 = make_folds(labels, 4, "classify", seed=7)
    assert all(np.array_equal(a, b) for a, b in zip(f1, f2))


def test_regression_folds_cover():
    y = list(np.linspace(0, 1, 53))
    folds = make_folds(y, 5, "regress", seed=11)
    assert sum(len(f) for f in folds) == 53
    assert len(np.unique(np.concatenate(folds))) == 53


def test_class_smaller_than_folds_rejected():
    labels = ["a"] * 20 + ["b"] * 3
    with pytest.raises(ForestError):
        make_folds(labels, 5, "classify", seed=13)


def test_cv_returns_mean_and_std():
    x, y = blobs_dataset(50, sep=10.0, seed=61)
    res = cross_validate(x, y, RfConfig(n_trees=20, seed=29), k=5)
    assert isinstance(res, CvResult)
    assert len(res.fold_errors) == 5
    assert res.mean_error == pytest.approx(np.mean(res.fold_errors))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_forest_round_trip_identical_predictions(tmp_path):
    x, y = blobs_dataset(30, sep=4.0, seed=67)
    forest = train_rf(x, y, RfConfig(n_trees=8, seed=31))
    path = tmp_path / "forest.json"
    save_forest(path, forest)
    loaded = load_forest(path)
    assert predict_batch(loaded, x) == predict_batch(forest, x)
    assert forest_to_json(loaded) == forest_to_json(forest)


def test_forest_regression_round_trip(tmp_path):
    rng = np.random.default_rng(71)
    x = rng.normal(size=(40, 3))
    y = np.stack([x[:, 0], x[:, 1] * 2], axis=1)
    forest = train_rf(x, y, RfConfig(n_trees=5, seed=37), task="regress")
    text = forest_to_json(forest)
    loaded = forest_from_json(text)
    np.testing.assert_array_equal(
        np.asarray(predict_batch(loaded, x)),
        np.asarray(predict_batch(forest, x)))


def test_forest_format_version_checked():
    with pytest.raises(ForestError):
        forest_from_json('{"format": "bogus"}')
