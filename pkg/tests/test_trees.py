import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncrb.decoders import (
    CoefficientDataset,
    build_tree,
    evaluate,
    fit_forest,
    fit_polynomial,
    fit_tree,
    gen_dataset,
    load_decoder,
)
from ncrb.decoders.tree import TreeArrays, bootstrap_sample


def ds(X, Y):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    return CoefficientDataset(X.reshape(len(X), -1), Y.reshape(len(Y), -1), {})


def best_split_bruteforce(X, Y):
    """Exhaustive SSE scan over every feature and every midpoint between distinct sorted values."""
    best = (np.inf, None, None)
    for f in range(X.shape[1]):
        xs = np.unique(X[:, f])
        for a, b in zip(xs[:-1], xs[1:]):
            thr = 0.5 * (a + b)
            m = X[:, f] <= thr
            sse = ((Y[m] - Y[m].mean(axis=0)) ** 2).sum() + ((Y[~m] - Y[~m].mean(axis=0)) ** 2).sum()
            if sse < best[0]:
                best = (sse, f, thr)
    return best


def test_constant_targets_single_leaf(rng):
    X = rng.random((40, 2))
    t = build_tree(X, np.full((40, 3), 2.5))
    assert t.n_leaves == 1 and t.max_depth == 0
    np.testing.assert_array_equal(t.predict(rng.random((5, 2))), np.full((5, 3), 2.5))


def test_depth_one_split_matches_bruteforce(rng):
    for trial in range(5):
        X = rng.random((60, 3))
        Y = np.column_stack([np.where(X[:, 1] > 0.4, 3.0, 0.0), X[:, 0]]) + 0.1 * rng.standard_normal((60, 2))
        t = build_tree(X, Y, max_depth=1)
        sse, f, thr = best_split_bruteforce(X, Y)
        assert t.feature[0] == f
        assert t.threshold[0] == thr
        assert t.n_leaves == 2


def test_leaf_values_are_training_means(rng):
    X = rng.random((300, 2))
    Y = np.column_stack([np.sin(6 * X[:, 0]) * X[:, 1], X[:, 0] ** 2])
    t = build_tree(X, Y, max_depth=6, min_samples_leaf=5)
    nodes = t.apply(X)
    for node in np.unique(nodes):
        rows = nodes == node
        assert rows.sum() >= 5
        np.testing.assert_allclose(t.value[t.leaf_id[node]], Y[rows].mean(axis=0), rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(t.predict(X), t.value[t.leaf_id[nodes]])


def test_preorder_numbering(rng):
    t = build_tree(rng.random((200, 2)), rng.random(200), max_depth=5)
    internal = np.flatnonzero(t.feature >= 0)
    np.testing.assert_array_equal(t.left[internal], internal + 1)
    assert np.all(t.right[internal] > t.left[internal])
    leaves = np.flatnonzero(t.feature < 0)
    np.testing.assert_array_equal(t.leaf_id[leaves], np.arange(t.n_leaves))


def test_nested_roundtrip(rng):
    t = build_tree(rng.random((500, 3)), rng.random((500, 2)), max_depth=12)
    back = TreeArrays.from_nested(json.loads(json.dumps(t.to_nested())), 2)
    for name in ("feature", "threshold", "left", "right", "leaf_id", "value", "depth"):
        np.testing.assert_array_equal(getattr(back, name), getattr(t, name))


def test_unlimited_tree_memorizes_distinct_inputs(rng):
    X = rng.random((2000, 2))
    Y = np.column_stack([np.cos(9 * X[:, 0] * X[:, 1]), X.sum(axis=1)])
    dec = fit_tree(ds(X, Y))
    assert evaluate(dec, X, Y)["mae"] <= 1e-15
    assert dec.tree.n_leaves == 2000


def test_min_samples_leaf_and_depth_limits(rng):
    X, Y = rng.random((400, 1)), rng.random(400)
    t = build_tree(X, Y, max_depth=3)
    assert t.max_depth <= 3 and t.n_leaves <= 8
    t = build_tree(X, Y, min_samples_leaf=50)
    assert np.bincount(t.apply(X)).max() <= 400
    assert np.all(np.bincount(t.apply(X))[np.flatnonzero(t.feature < 0)] >= 50)
    with pytest.raises(ValueError):
        build_tree(X[:3], Y[:3], min_samples_leaf=2)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), m=st.integers(2, 200), depth=st.one_of(st.none(), st.integers(0, 8)))
def test_predictions_within_target_range_property(seed, m, depth):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, 2))
    Y = rng.standard_normal((m, 2))
    t = build_tree(X, Y, max_depth=depth)
    P = t.predict(5 * rng.standard_normal((100, 2)))
    assert np.all(P >= Y.min(axis=0) - 1e-12) and np.all(P <= Y.max(axis=0) + 1e-12)


def test_max_features_seed_determinism(rng):
    X, Y = rng.random((300, 4)), rng.random(300)
    a = build_tree(X, Y, max_features=2, seed=11)
    b = build_tree(X, Y, max_features=2, seed=11)
    np.testing.assert_array_equal(a.threshold, b.threshold)
    np.testing.assert_array_equal(a.feature, b.feature)


# --- forest -----------------------------------------------------------------


def test_single_tree_forest_without_bootstrap_equals_tree(rng):
    X, Y = rng.random((300, 2)), rng.random((300, 2))
    f = fit_forest(ds(X, Y), n_trees=1, bootstrap=False)
    t = fit_tree(ds(X, Y), seed=0 << 20)
    q = rng.random((100, 2))
    np.testing.assert_array_equal(f.predict(q), t.predict(q))


def test_forest_of_constant_targets(rng):
    X = rng.random((100, 2))
    f = fit_forest(ds(X, np.full(100, -1.25)), n_trees=5)
    np.testing.assert_array_equal(f.predict(rng.random((7, 2))), np.full((7, 1), -1.25))


def test_forest_is_mean_of_trees(rng):
    X, Y = rng.random((200, 1)), rng.random(200)
    f = fit_forest(ds(X, Y), n_trees=4, seed=9)
    q = rng.random((30, 1))
    np.testing.assert_allclose(f.predict(q), np.mean([t.predict(q) for t in f.trees], axis=0), rtol=1e-14)


def test_bootstrap_sample_reproducible():
    a = bootstrap_sample(1000, 3, 7)
    assert a.tobytes() == bootstrap_sample(1000, 3, 7).tobytes()
    assert not np.array_equal(a, bootstrap_sample(1000, 3, 8))
    assert a.min() >= 0 and a.max() < 1000
    # about 1 - 1/e of the rows appear at least once
    assert 0.6 <= len(np.unique(a)) / 1000 <= 0.67


def test_forest_threads_and_file_bitwise(tmp_path, rng):
    X, Y = rng.random((500, 2)), rng.random((500, 3))
    a = fit_forest(ds(X, Y), n_trees=6, seed=2, threads=1)
    b = fit_forest(ds(X, Y), n_trees=6, seed=2, threads=3)
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    back = load_decoder(tmp_path / "a.json")
    q = rng.random((50, 2))
    assert back.predict(q).tobytes() == a.predict(q).tobytes()


# --- desk scale -------------------------------------------------------------


@pytest.fixture(scope="module")
def p1_tree_data(desk_p1):
    pl = desk_p1
    return gen_dataset(pl.red, pl.design, 100000, 1, seed=3), gen_dataset(pl.red, pl.design, 2000, 1, seed=12345)


def test_p1_forest_no_worse_than_tree(p1_tree_data):
    train, test = p1_tree_data
    tree = evaluate(fit_tree(train, seed=3), test.inputs, test.targets)["mse"]
    forest = evaluate(fit_forest(train, n_trees=50, seed=3), test.inputs, test.targets)["mse"]
    assert forest <= 1.05 * tree


def test_p2_trees_beat_low_degree_polynomials(desk_p1):
    pl = desk_p1.with_design(2)
    train = gen_dataset(pl.red, pl.design, 100000, 2, seed=3)
    test = gen_dataset(pl.red, pl.design, 2000, 2, seed=12345)
    tree = evaluate(fit_tree(train, seed=3), test.inputs, test.targets)["mae"]
    forest = evaluate(fit_forest(train, n_trees=10, seed=3), test.inputs, test.targets)["mae"]
    best_poly = min(evaluate(fit_polynomial(train, d), test.inputs, test.targets)["mae"] for d in range(0, 7))
    assert tree < best_poly and forest < best_poly
