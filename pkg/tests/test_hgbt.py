import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from herdgate.hgbt import Hyperparameters, ModelFormatError, fit_bins, load_model, save_model, train
from herdgate.hgbt.ensemble import dumps_model, model_from_dict, model_to_dict
from herdgate.hgbt.grower import HistogramBuilder, find_best_split
from oracles import best_categorical_partition_gain, exact_greedy_tree


def _toy(seed, n=300, p=3, missing=0.1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    X[rng.random((n, p)) < missing] = np.nan
    logit = 1.5 * np.nan_to_num(X[:, 0]) - np.nan_to_num(X[:, -1]) * (p > 1)
    y = (rng.random(n) < expit(logit)).astype(float)
    return X, y


# ------------------------------------------------------------------ binning


def test_constant_feature_gets_one_value_bin():
    mapper = fit_bins(np.full((50, 1), 3.0))
    assert mapper.features[0].n_value_bins == 1
    binned = mapper.transform(np.array([[3.0], [np.nan]]))
    assert binned[0, 0] == 0 and binned[1, 0] == mapper.missing_bin


def test_three_distinct_values_three_bins():
    X = np.array([[1.0], [2.0], [5.0], [2.0], [1.0]])
    mapper = fit_bins(X, max_bins=255)
    assert mapper.features[0].n_value_bins == 3
    assert list(mapper.transform(X)[:, 0]) == [0, 1, 2, 1, 0]


def test_quantile_bins_have_equal_population():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(10_000, 1))
    mapper = fit_bins(X, max_bins=4)
    counts = np.bincount(mapper.transform(X)[:, 0], minlength=4)[:4]
    assert np.all(np.abs(counts - 2500) <= 0.05 * 2500)


def test_all_missing_feature_warns_and_uses_missing_bin():
    X = np.column_stack([np.arange(10.0), np.full(10, np.nan)])
    with pytest.warns(RuntimeWarning):
        mapper = fit_bins(X)
    assert mapper.warnings
    assert np.all(mapper.transform(X)[:, 1] == mapper.missing_bin)


def test_infinite_values_rejected_at_binning():
    with pytest.raises(ValueError, match="non-finite"):
        fit_bins(np.array([[1.0], [np.inf]]))


def test_categorical_overflow_and_unseen_codes():
    codes = np.repeat(np.arange(10.0), np.arange(10, 0, -1))[:, None]
    mapper = fit_bins(codes, categorical=[True], max_bins=4)
    fb = mapper.features[0]
    assert fb.n_value_bins == 4 and fb.overflow_bin == 3
    binned = mapper.transform(np.array([[0.0], [1.0], [2.0], [9.0], [77.0], [np.nan]]))[:, 0]
    assert list(binned) == [0, 1, 2, 3, 3, mapper.missing_bin]


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=400),
    st.integers(2, 255),
)
def test_edges_strictly_increasing_and_bins_cover_values(values, max_bins):
    X = np.array(values)[:, None]
    mapper = fit_bins(X, max_bins=max_bins)
    edges = mapper.features[0].edges
    assert np.all(np.diff(edges) > 0)
    binned = mapper.transform(X)[:, 0]
    assert binned.max() < mapper.features[0].n_value_bins
    # binning is monotone in the raw value
    order = np.argsort(X[:, 0], kind="stable")
    assert np.all(np.diff(binned[order].astype(int)) >= 0)


# ------------------------------------------------------------------ training


def test_single_class_labels_rejected():
    X = np.arange(10.0)[:, None]
    with pytest.raises(ValueError, match="degenerate labels"):
        train(X, np.zeros(10))


def test_separable_dataset_one_split():
    rng = np.random.default_rng(1)
    X = np.column_stack([rng.normal(size=200), rng.normal(size=200)])
    y = (X[:, 1] > 0.2).astype(float)
    model = train(X, y, Hyperparameters(n_iterations=1, max_leaf_nodes=2, learning_rate=1.0))
    tree = model.trees[0]
    assert tree.feature[0] == 1
    assert np.mean(model.predict(X) == y) == 1.0


@pytest.mark.parametrize("seed", range(8))
def test_first_tree_matches_exact_greedy_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(30, 200))
    X, y = _toy(seed, n=n, p=int(rng.integers(1, 4)))
    X = np.round(X, 1)
    leaves = int(rng.integers(2, 10))
    msl = int(rng.integers(1, 5))
    model = train(X, y, Hyperparameters(n_iterations=1, max_leaf_nodes=leaves, min_samples_leaf=msl))
    tree = model.trees[0]
    got = [(i, tree.feature[i], tree.threshold_bin[i], tree.missing_left[i]) for i in tree.split_order()]
    assert got == exact_greedy_tree(X, y, leaves, 0.0, msl)


@pytest.mark.parametrize("seed", range(5))
def test_categorical_scan_reaches_best_partition(seed):
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, 6, 150).astype(float)
    y = (rng.random(150) < np.array([0.1, 0.8, 0.3, 0.5, 0.9, 0.2])[codes.astype(int)]).astype(float)
    p0 = y.mean()
    g, h = p0 - y, np.full(150, p0 * (1 - p0))
    mapper = fit_bins(codes[:, None], categorical=[True])
    binned = mapper.transform(codes[:, None])
    hist = HistogramBuilder(binned, mapper.max_bins + 1).build(np.arange(150), g, h)
    split = find_best_split(hist, np.array([mapper.features[0].n_value_bins]), np.array([True]), 0.0, 1)
    assert split.gain == pytest.approx(best_categorical_partition_gain(codes, g, h), rel=1e-10)


def test_histogram_subtraction_matches_direct_build():
    X, y = _toy(3, n=2000, p=4)
    mapper = fit_bins(X)
    binned = mapper.transform(X)
    builder = HistogramBuilder(binned, mapper.max_bins + 1)
    rng = np.random.default_rng(0)
    g, h = rng.normal(size=2000), rng.uniform(0.05, 0.25, 2000)
    parent = np.sort(rng.choice(2000, 1500, replace=False))
    for _ in range(5):
        mask = rng.random(len(parent)) < rng.uniform(0.1, 0.9)
        left, right = parent[mask], parent[~mask]
        direct = builder.build(right, g, h)
        derived = builder.build(parent, g, h) - builder.build(left, g, h)
        assert np.array_equal(direct.c, derived.c)
        scale = np.maximum(np.abs(direct.g), 1.0)
        assert np.all(np.abs(direct.g - derived.g) <= 1e-9 * scale)
        assert np.all(np.abs(direct.h - derived.h) <= 1e-9 * np.maximum(direct.h, 1.0))


@pytest.mark.parametrize("lr", [0.1, 0.5, 1.0])
def test_training_loss_non_increasing(lr):
    X, y = _toy(5, n=1500)
    model = train(X, y, Hyperparameters(learning_rate=lr, n_iterations=30, max_leaf_nodes=15))
    assert np.all(np.diff(model.train_loss) <= 1e-12)


def test_tree_structure_invariants():
    X, y = _toy(6, n=2000)
    hp = Hyperparameters(n_iterations=10, max_leaf_nodes=12, min_samples_leaf=25)
    model = train(X, y, hp)
    for tree in model.trees:
        assert tree.n_leaves <= hp.max_leaf_nodes
        for i in range(tree.n_nodes):
            if tree.is_leaf(i):
                assert tree.count[i] >= hp.min_samples_leaf
                assert np.isfinite(tree.value[i])
            else:
                assert tree.gain[i] > 0
                assert tree.count[tree.left[i]] + tree.count[tree.right[i]] == tree.count[i]


def test_training_is_bit_deterministic():
    X, y = _toy(7, n=800)
    hp = Hyperparameters(n_iterations=15, max_leaf_nodes=8)
    assert dumps_model(train(X, y, hp, seed=3)) == dumps_model(train(X, y, hp, seed=3))


# ------------------------------------------------------------------ prediction


def test_zero_tree_model_predicts_prevalence():
    X, y = _toy(8, n=400)
    model = train(X, y, Hyperparameters(n_iterations=0))
    assert np.allclose(model.predict_proba(X), y.mean(), rtol=0, atol=1e-12)


def test_overfit_model_memorizes_rows():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(60, 2))
    y = (rng.random(60) < 0.5).astype(float)
    model = train(X, y, Hyperparameters(n_iterations=50, max_leaf_nodes=60, min_samples_leaf=1, learning_rate=1.0))
    assert np.all((model.predict_proba(X) >= 0.5) == (y == 1))


def _toy_model_dict():
    # tree 0: root splits feature 0 at bin 0, missing -> left leaf (+0.5)
    # tree 1: root splits feature 1, missing -> right; right child splits feature 0, missing -> left (-0.25)
    def tree(**kw):
        n = len(kw["value"])
        base = {
            "feature": [-1] * n,
            "threshold_bin": [-1] * n,
            "missing_left": [False] * n,
            "categorical": [False] * n,
            "left_bins": [[] for _ in range(n)],
            "left": [-1] * n,
            "right": [-1] * n,
            "gain": [0.0] * n,
            "count": [1] * n,
        }
        base.update(kw)
        return base

    t0 = tree(feature=[0, -1, -1], threshold_bin=[0, -1, -1], missing_left=[True, False, False],
              left=[1, -1, -1], right=[2, -1, -1], value=[0.0, 0.5, -0.5])
    t1 = tree(feature=[1, -1, 0, -1, -1], threshold_bin=[1, -1, 0, -1, -1],
              missing_left=[False, False, True, False, False], left=[1, -1, 3, -1, -1],
              right=[2, -1, 4, -1, -1], value=[0.0, 0.1, 0.0, -0.25, 0.75])
    return {
        "schema": "herdgate.hgbt/1",
        "base_score": -1.0,
        "learning_rate": 0.5,
        "hyperparameters": {"learning_rate": 0.5, "max_leaf_nodes": 3, "n_iterations": 2,
                            "l2_regularization": 0.0, "min_samples_leaf": 1, "max_bins": 255},
        "feature_names": ["a", "b"],
        "seed": 0,
        "n_iterations": 2,
        "train_loss": [0.7, 0.6, 0.5],
        "bin_mapper": {
            "max_bins": 255,
            "features": [
                {"categorical": False, "edges": [0.0, 1.0], "n_value_bins": 3},
                {"categorical": False, "edges": [0.0, 1.0], "n_value_bins": 3},
            ],
        },
        "trees": [t0, t1],
    }


def test_all_missing_record_follows_missing_directions():
    model = model_from_dict(_toy_model_dict())
    got = model.predict_proba(np.array([[np.nan, np.nan]]))[0]
    # hand trace: tree0 root -> left (+0.5); tree1 root -> right, node 2 -> left (-0.25)
    assert got == expit(-1.0 + 0.5 * (0.5 - 0.25))
    got = model.predict_proba(np.array([[2.0, -1.0]]))[0]
    assert got == expit(-1.0 + 0.5 * (-0.5 + 0.1))


# ------------------------------------------------------------------ model files


def test_save_load_round_trip_is_bit_exact(tmp_path):
    X, y = _toy(10, n=1000)
    cat = np.array([False, False, True])
    X[:, 2] = np.where(np.isnan(X[:, 2]), np.nan, np.floor(np.abs(X[:, 2]) * 3))
    model = train(X, y, Hyperparameters(n_iterations=20, max_leaf_nodes=10), categorical=cat)
    path = tmp_path / "m.json"
    save_model(model, path)
    loaded = load_model(path)
    rng = np.random.default_rng(1)
    probe = rng.normal(size=(1000, 3))
    probe[:, 2] = np.floor(np.abs(probe[:, 2]) * 4)  # includes unseen categories
    probe[rng.random(probe.shape) < 0.1] = np.nan
    assert np.array_equal(model.predict_proba(probe), loaded.predict_proba(probe))
    assert dumps_model(loaded) == path.read_text()


def test_truncated_file_rejected(tmp_path):
    X, y = _toy(11, n=300)
    path = tmp_path / "m.json"
    save_model(train(X, y, Hyperparameters(n_iterations=3)), path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_schema_version_mismatch_rejected(tmp_path):
    d = _toy_model_dict()
    d["schema"] = "herdgate.hgbt/0"
    path = tmp_path / "m.json"
    path.write_text(json.dumps(d))
    with pytest.raises(ModelFormatError, match="schema"):
        load_model(path)


def test_leaf_edit_changes_only_rows_reaching_that_leaf(tmp_path):
    X, y = _toy(12, n=1000)
    model = train(X, y, Hyperparameters(n_iterations=5, max_leaf_nodes=6))
    d = model_to_dict(model)
    tree = d["trees"][2]
    leaf = next(i for i, left in enumerate(tree["left"]) if left < 0)
    tree["value"][leaf] += 1.0
    edited = model_from_dict(json.loads(json.dumps(d)))
    reach = model.apply(X)[:, 2] == leaf
    changed = model.predict_proba(X) != edited.predict_proba(X)
    assert reach.any()
    assert np.array_equal(changed, reach)


def test_hyperparameter_ranges_enforced():
    with pytest.raises(ValueError):
        Hyperparameters(learning_rate=1.5)
    with pytest.raises(ValueError):
        Hyperparameters(max_leaf_nodes=1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        Hyperparameters(learning_rate=0.01, max_leaf_nodes=2000)
