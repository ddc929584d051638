import json
import os
import sys

import numpy as np
import pytest

# Add src to path
sys.path.append(os.path.join(os.path.dirname(__file__), "../src"))

from config import ForestConfig
from ensemble import (
    feature_importance,
    grow_tree,
    load_model,
    predict_labels,
    predict_proba,
    save_model,
    to_matrix,
    train_forest,
)
from errors import CorruptModelError, EmptyDataError, SingleClassError, VersionMismatchError
from evaluation import roc_auc
from models.features import FEATURE_NAMES, N_FEATURES, GazeFeatures, Label, PassageFeatureVector


def make_rows(X, y):
    labels = {1: Label.ANNOTATED, 0: Label.NOT_ANNOTATED, -1: Label.UNKNOWN}
    return [
        PassageFeatureVector("P01", i, 0, GazeFeatures.from_values(x), labels[int(t)])
        for i, (x, t) in enumerate(zip(X, y))
    ]


def toy(n=200, seed=0):
    """feature 0 decides the class; the others are noise."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, size=(n, N_FEATURES))
    y = (X[:, 0] > 0.6).astype(int)
    return X, y


def single_tree(**overrides):
    values = dict(n_trees=1, bootstrap=False, features_per_split=N_FEATURES, class_weighting="none")
    values.update(overrides)
    return ForestConfig(**values)


def test_unbagged_tree_fits_training_set():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 1, size=(150, N_FEATURES))
    y = rng.integers(0, 2, size=150)

    model = train_forest(make_rows(X, y), single_tree())
    assert np.array_equal(predict_labels(model, X), y), "an unpruned tree memorizes distinct rows"


def test_separable_toy_set():
    X, y = toy()
    model = train_forest(make_rows(X, y), ForestConfig(n_trees=30, seed=4))
    X_test, y_test = toy(500, seed=9)

    accuracy = float(np.mean(predict_labels(model, X_test) == y_test))
    assert accuracy > 0.95, f"accuracy {accuracy:.3f}"
    assert roc_auc(predict_proba(model, X_test), y_test) > 0.98


def test_same_seed_same_model():
    X, y = toy()
    rows = make_rows(X, y)
    a = train_forest(rows, ForestConfig(n_trees=12, seed=3))
    b = train_forest(rows, ForestConfig(n_trees=12, seed=3, n_jobs=2))
    c = train_forest(rows, ForestConfig(n_trees=12, seed=4))

    X_test, _ = toy(100, seed=5)
    assert np.array_equal(predict_proba(a, X_test), predict_proba(b, X_test)), "worker count changed the model"
    assert np.array_equal(a.feature_importances, b.feature_importances)
    assert not all(
        np.array_equal(s.threshold, t.threshold) for s, t in zip(a.trees, c.trees)
    ), "a different seed should grow different trees"


def reference_cart(X, y):
    """exhaustive unweighted Gini CART as nested tuples; ties keep the first cut found."""
    if y.min() == y.max():
        return int(y[0])
    best = None
    for f in range(X.shape[1]):
        values = np.unique(X[:, f])
        for lo, hi in zip(values[:-1], values[1:]):
            threshold = (lo + hi) / 2.0
            if not lo <= threshold < hi:
                threshold = lo
            left = X[:, f] <= threshold
            l, r = float(left.sum()), float((~left).sum())
            l1, r1 = float(y[left].sum()), float(y[~left].sum())
            score = 2.0 * l1 * (l - l1) / l + 2.0 * r1 * (r - r1) / r
            if best is None or score < best[0]:
                best = (score, f, threshold)
    if best is None:
        return int(y.mean() >= 0.5)
    _, f, threshold = best
    left = X[:, f] <= threshold
    return (f, threshold, reference_cart(X[left], y[left]), reference_cart(X[~left], y[~left]))


def reference_predict(node, x):
    while isinstance(node, tuple):
        f, threshold, left, right = node
        node = left if x[f] <= threshold else right
    return node


def test_matches_reference_cart():
    rng = np.random.default_rng(21)
    for trial in range(10):
        # one decimal place gives repeated values within a feature
        X = np.round(rng.uniform(0, 1, size=(60, N_FEATURES)), 1)
        y = ((X[:, trial % N_FEATURES] + rng.normal(0, 0.2, 60)) > 0.5).astype(int)
        if y.min() == y.max():
            continue
        reference = reference_cart(X, y)
        tree = grow_tree(X, y, single_tree(), 0)

        X_test = np.round(rng.uniform(0, 1, size=(300, N_FEATURES)), 2)
        want = np.array([reference_predict(reference, x) for x in X_test])
        assert np.array_equal(tree.leaf_proba(X_test) >= 0.5, want == 1)


def test_shuffled_labels_have_no_signal():
    rng = np.random.default_rng(8)
    X = rng.uniform(0, 1, size=(400, N_FEATURES))
    y = rng.integers(0, 2, size=400)
    model = train_forest(make_rows(X, y), ForestConfig(n_trees=25, seed=2))

    X_test = rng.uniform(0, 1, size=(2000, N_FEATURES))
    y_test = rng.integers(0, 2, size=2000)
    auc = roc_auc(predict_proba(model, X_test), y_test)
    assert abs(auc - 0.5) <= 0.1, f"auc {auc:.3f} on random labels"


def test_importances():
    X, y = toy()
    model = train_forest(make_rows(X, y), ForestConfig(n_trees=20, seed=1))

    assert model.feature_importances.sum() == pytest.approx(1.0)
    assert all(t.importances.sum() == pytest.approx(1.0) for t in model.trees if t.n_splits)
    ranked = feature_importance(model)
    assert ranked[0][0] == FEATURE_NAMES[0] == "norm_fixation_count"
    assert [score for _, score in ranked] == sorted((s for _, s in ranked), reverse=True)


def test_no_possible_split_gives_uniform_importances():
    X = np.ones((6, N_FEATURES))
    y = np.array([0, 1, 0, 1, 0, 1])
    model = train_forest(make_rows(X, y), ForestConfig(n_trees=3, bootstrap=False))

    assert all(t.n_nodes == 1 for t in model.trees)
    assert np.allclose(model.feature_importances, 1.0 / N_FEATURES)
    assert predict_proba(model, make_rows(X[:1], y[:1])[0]) == pytest.approx(0.5)


def test_balanced_weights_equalize_classes():
    X, _ = toy(300, seed=12)
    y = np.zeros(300, dtype=int)
    y[:15] = 1

    plain = grow_tree(X, y, single_tree(), 0)
    balanced = grow_tree(X, y, single_tree(class_weighting="balanced"), 0)
    assert plain.value[0].tolist() == [285.0, 15.0]
    assert balanced.value[0] == pytest.approx([150.0, 150.0])


def test_training_errors():
    X, _ = toy(10)
    with pytest.raises(SingleClassError):
        train_forest(make_rows(X, np.zeros(10, dtype=int)))
    with pytest.raises(EmptyDataError):
        train_forest(make_rows(X, -np.ones(10, dtype=int)))
    with pytest.raises(EmptyDataError):
        train_forest([])


def test_to_matrix_marks_unknown():
    X, _ = toy(3)
    _, y = to_matrix(make_rows(X, [1, 0, -1]))
    assert y.tolist() == [1, 0, -1]


def test_single_row_prediction_is_float():
    X, y = toy()
    model = train_forest(make_rows(X, y), ForestConfig(n_trees=5))
    score = predict_proba(model, make_rows(X[:1], y[:1])[0])

    assert isinstance(score, float) and 0.0 <= score <= 1.0
    assert predict_proba(model, []).shape == (0,)


def test_model_file_round_trip(tmp_path):
    X, y = toy()
    model = train_forest(make_rows(X, y), ForestConfig(n_trees=8, seed=6))
    save_model(model, tmp_path / "model.forest")
    loaded = load_model(tmp_path / "model.forest")

    X_test, _ = toy(200, seed=3)
    assert np.array_equal(predict_proba(loaded, X_test), predict_proba(model, X_test))
    assert np.array_equal(loaded.feature_importances, model.feature_importances)
    assert loaded.config == model.config


def test_model_version_mismatch(tmp_path):
    X, y = toy(50)
    save_model(train_forest(make_rows(X, y), ForestConfig(n_trees=2)), tmp_path / "model.forest")
    document = json.loads((tmp_path / "model.forest").read_text())
    document["version"] = 2
    (tmp_path / "model.forest").write_text(json.dumps(document))

    with pytest.raises(VersionMismatchError):
        load_model(tmp_path / "model.forest")


def test_truncated_model(tmp_path):
    X, y = toy(50)
    save_model(train_forest(make_rows(X, y), ForestConfig(n_trees=2)), tmp_path / "model.forest")
    text = (tmp_path / "model.forest").read_text()
    (tmp_path / "model.forest").write_text(text[: len(text) // 2])

    with pytest.raises(CorruptModelError):
        load_model(tmp_path / "model.forest")


def test_model_with_bad_child_index(tmp_path):
    X, y = toy(50)
    save_model(train_forest(make_rows(X, y), ForestConfig(n_trees=1)), tmp_path / "model.forest")
    document = json.loads((tmp_path / "model.forest").read_text())
    document["trees"][0]["left"][0] = 999
    (tmp_path / "model.forest").write_text(json.dumps(document))

    with pytest.raises(CorruptModelError):
        load_model(tmp_path / "model.forest")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
