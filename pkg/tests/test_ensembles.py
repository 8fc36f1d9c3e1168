import numpy as np
import pytest

from stlrep.classifiers import forest_train
from stlrep.ensembles import (
    PosteriorMatrix,
    fuse_product,
    fuse_sum,
    knorau_batch,
    knorau_combine,
    knorau_predict,
    nearest_neighbors,
    stack_predict,
    stack_train,
)

A = PosteriorMatrix([[0.6, 0.4]], (0, 1))
B = PosteriorMatrix([[0.2, 0.8]], (0, 1))


def test_sum_rule_hand_values():
    np.testing.assert_allclose(fuse_sum([A, B]).values, [[0.4, 0.6]])


def test_product_rule_hand_values():
    # 0.12 vs 0.32 -> 0.2727.., 0.7272..
    np.testing.assert_allclose(fuse_product([A, B]).values, [[0.12 / 0.44, 0.32 / 0.44]])


def test_product_floor_with_zeros():
    z = PosteriorMatrix([[1.0, 0.0]], (0, 1))
    w = PosteriorMatrix([[0.0, 1.0]], (0, 1))
    np.testing.assert_allclose(fuse_product([z, w]).values, [[0.5, 0.5]])


def test_fusion_rejects_mismatch():
    with pytest.raises(ValueError, match="class"):
        fuse_sum([A, PosteriorMatrix([[0.5, 0.5]], (0, 2))])
    with pytest.raises(ValueError):
        fuse_sum([])


def test_stacking_learns_reliable_member(rng):
    y = rng.integers(0, 2, size=80)
    good = PosteriorMatrix(np.eye(2)[y] * 0.8 + 0.1, (0, 1))
    noise = PosteriorMatrix(rng.dirichlet([1, 1], size=80), (0, 1))
    meta = stack_train([noise, good], y)
    out = stack_predict(meta, [noise, good])
    assert np.mean(out.argmax() == y) == 1.0
    with pytest.raises(ValueError, match="two classes"):
        stack_train([good], np.zeros(80, int))
    with pytest.raises(ValueError, match="expects"):
        stack_predict(meta, [good])


def _knn_oracle(ref, q, k, exclude=None):
    d = [(float(np.sum((q - r) ** 2)), i) for i, r in enumerate(ref) if i != exclude]
    return [i for _, i in sorted(d)[:k]]


def _knorau_oracle(val_x, val_y, val_preds, test_x, test_preds, K, k):
    # straight transcription of the rule, one test row at a time
    out = []
    for t in range(test_x.shape[0]):
        nb = _knn_oracle(val_x, test_x[t], k)
        weights = [sum(val_preds[i, c] == val_y[i] for i in nb) for c in range(val_preds.shape[1])]
        votes = np.zeros(K)
        for c, wgt in enumerate(weights):
            votes[test_preds[t, c]] += wgt
        out.append((weights, votes))
    return out


def test_knorau_weights_match_bruteforce(rng):
    for _ in range(100):
        n_clf, n_val, K, n_test = int(rng.integers(1, 6)), int(rng.integers(7, 31)), int(rng.integers(2, 5)), 4
        val_x = rng.integers(0, 4, size=(n_val, 2)).astype(float)  # coarse grid: plenty of distance ties
        test_x = rng.integers(0, 4, size=(n_test, 2)).astype(float)
        val_y = rng.integers(0, K, size=n_val)
        val_preds = rng.integers(0, K, size=(n_val, n_clf))
        test_preds = rng.integers(0, K, size=(n_test, n_clf))
        posts = rng.dirichlet(np.ones(K), size=(n_clf, n_test))
        nbrs = nearest_neighbors(val_x, test_x, 7)
        post, weights = knorau_combine(nbrs, val_preds, val_y, test_preds, posts, np.arange(K))
        for t, (w_ref, v_ref) in enumerate(_knorau_oracle(val_x, val_y, val_preds, test_x, test_preds, K, 7)):
            np.testing.assert_array_equal(weights[t], w_ref)
            if v_ref.sum() > 0:
                np.testing.assert_allclose(post[t], v_ref / v_ref.sum())
            else:
                np.testing.assert_allclose(post[t], posts[:, t].mean(axis=0))


def test_knorau_hand_example():
    # three classifiers; neighbours make clf0 fully competent, clf2 never
    val_preds = np.array([[0, 1, 1], [1, 0, 0], [0, 0, 1]])
    val_y = np.array([0, 1, 0])
    nbrs = np.array([[0, 1, 2]])
    post, w = knorau_combine(nbrs, val_preds, val_y, np.array([[1, 0, 0]]), np.zeros((3, 1, 2)), np.array([0, 1]))
    np.testing.assert_array_equal(w, [[3, 1, 0]])
    np.testing.assert_allclose(post, [[0.25, 0.75]])


def test_knorau_all_zero_falls_back_to_sum():
    val_preds = np.array([[1], [1]])
    posts = np.array([[[0.3, 0.7]]])
    post, w = knorau_combine(np.array([[0, 1]]), val_preds, np.array([0, 0]), np.array([[1]]), posts, np.arange(2))
    np.testing.assert_array_equal(w, [[0]])
    np.testing.assert_allclose(post, [[0.3, 0.7]])


def test_nearest_neighbors_ties_and_exclusion():
    ref = np.array([[0.0], [1.0], [-1.0], [0.0]])
    np.testing.assert_array_equal(nearest_neighbors(ref, [[0.0]], 3), [[0, 3, 1]])
    np.testing.assert_array_equal(nearest_neighbors(ref, [[0.0]], 2, exclude=[0]), [[3, 1]])
    with pytest.raises(ValueError, match="k=7"):
        nearest_neighbors(ref, [[0.0]], 7)


def test_knorau_on_forest_members(rng):
    centers = rng.normal(0, 3, size=(3, 4))
    X = np.vstack([c + rng.normal(size=(15, 4)) for c in centers])
    y = np.repeat(np.arange(3), 15)
    f = forest_train(X[::2], y[::2], n_trees=10, seed=1)
    post, w = knorau_batch(f.trees, X[1::2], y[1::2], X[1::2], k=7, exclude_self=True)
    assert w.shape == (X[1::2].shape[0], 10)
    assert np.all(w <= 7)
    np.testing.assert_allclose(post.values.sum(axis=1), 1.0)
    cls, weights = knorau_predict(f.trees, X[1::2], y[1::2], X[0], k=7)
    assert cls in (0, 1, 2) and weights.shape == (10,)
