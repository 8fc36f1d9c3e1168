"""Posterior fusion (sum, product, stacking) and KNORA-U dynamic selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifiers import LogisticRegression, logreg_train, predict_proba

PRODUCT_FLOOR = 1e-12


@dataclass
class PosteriorMatrix:
    values: np.ndarray  # (n_samples, n_classes), rows sum to 1
    classes: tuple

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        self.classes = tuple(int(c) for c in self.classes)
        if self.values.shape[1] != len(self.classes):
            raise ValueError(f"{self.values.shape[1]} columns for {len(self.classes)} classes")

    def argmax(self):
        return np.asarray(self.classes)[np.argmax(self.values, axis=1)]


def _aligned(posteriors):
    posteriors = list(posteriors)
    if not posteriors:
        raise ValueError("no posteriors to combine")
    first = posteriors[0]
    for p in posteriors[1:]:
        if p.classes != first.classes:
            raise ValueError(f"class lists differ: {first.classes} vs {p.classes}")
        if p.values.shape != first.values.shape:
            raise ValueError(f"posterior shapes differ: {first.values.shape} vs {p.values.shape}")
    return posteriors


def fuse_sum(posteriors) -> PosteriorMatrix:
    """Mean of the member posteriors."""
    ps = _aligned(posteriors)
    return PosteriorMatrix(np.mean([p.values for p in ps], axis=0), ps[0].classes)


def fuse_product(posteriors) -> PosteriorMatrix:
    """Row-normalised product of posteriors floored at 1e-12 (computed in log space)."""
    ps = _aligned(posteriors)
    logs = np.sum([np.log(np.maximum(p.values, PRODUCT_FLOOR)) for p in ps], axis=0)
    logs -= logs.max(axis=1, keepdims=True)
    prod = np.exp(logs)
    return PosteriorMatrix(prod / prod.sum(axis=1, keepdims=True), ps[0].classes)


def _stack_inputs(posteriors):
    ps = _aligned(posteriors)
    return np.hstack([p.values for p in ps]), ps[0].classes


def stack_train(validation_posteriors, validation_labels, C=1.0, max_iter=500) -> LogisticRegression:
    """Logistic-regression meta learner on concatenated member posteriors."""
    x, _ = _stack_inputs(validation_posteriors)
    y = np.asarray(validation_labels, dtype=np.int64)
    if np.unique(y).size < 2:
        raise ValueError("stacking needs at least two classes in the validation labels")
    return logreg_train(x, y, C=C, max_iter=max_iter)


def stack_predict(meta: LogisticRegression, test_posteriors) -> PosteriorMatrix:
    x, classes = _stack_inputs(test_posteriors)
    if x.shape[1] != meta.coef.shape[0]:
        raise ValueError(f"meta learner expects {meta.coef.shape[0]} inputs, got {x.shape[1]}")
    return PosteriorMatrix(predict_proba(meta, x, classes=classes), classes)


def nearest_neighbors(reference, queries, k, exclude=None):
    """Indices of the ``k`` nearest reference rows for every query row.

    Euclidean distance; ties go to the lowest reference index. ``exclude``
    optionally gives, per query, one reference index to leave out.
    """
    reference = np.asarray(reference, dtype=np.float64)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if reference.shape[1] != queries.shape[1]:
        raise ValueError(f"feature widths differ: {reference.shape[1]} vs {queries.shape[1]}")
    avail = reference.shape[0] - (1 if exclude is not None else 0)
    if avail < k:
        raise ValueError(f"validation set has {avail} usable rows, k={k} needed")
    d = np.sum((queries[:, None, :] - reference[None, :, :]) ** 2, axis=2)
    if exclude is not None:
        d[np.arange(queries.shape[0]), np.asarray(exclude)] = np.inf
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def knorau_combine(neighbor_idx, val_preds, val_labels, test_preds, test_posteriors, classes):
    """Weighted votes of KNORA-U given precomputed neighbourhoods.

    ``val_preds`` is (n_val, n_clf), ``test_preds`` is (n_test, n_clf),
    ``test_posteriors`` is (n_clf, n_test, n_classes). Returns
    (posterior rows, competence weights (n_test, n_clf)). Rows where every
    weight is zero fall back to the sum rule over the whole pool.
    """
    classes = np.asarray(classes)
    correct = np.asarray(val_preds) == np.asarray(val_labels)[:, None]  # n_val, n_clf
    weights = correct[neighbor_idx].sum(axis=1)  # n_test, n_clf
    col = np.searchsorted(classes, test_preds)
    votes = np.zeros((neighbor_idx.shape[0], classes.size))
    rows = np.repeat(np.arange(neighbor_idx.shape[0]), weights.shape[1])
    np.add.at(votes, (rows, col.ravel()), weights.ravel().astype(np.float64))
    total = votes.sum(axis=1, keepdims=True)
    fallback = np.mean(test_posteriors, axis=0)
    post = np.where(total > 0, votes / np.where(total > 0, total, 1.0), fallback)
    return post, weights


def knorau_predict(pool, val_features, val_labels, test_row, k=7):
    """KNORA-U decision for one test row with classifiers sharing one feature space.

    Returns (predicted class, competence weights per classifier).
    """
    post, weights = knorau_batch(pool, val_features, val_labels, np.atleast_2d(test_row), k)
    return int(post.argmax()[0]), weights[0]


def knorau_batch(pool, val_features, val_labels, test_features, k=7, exclude_self=False):
    """KNORA-U over a list of classifiers evaluated on the same features.

    With ``exclude_self`` the test rows are the validation rows themselves
    and each row is left out of its own neighbourhood.
    """
    pool = list(pool)
    if not pool:
        raise ValueError("classifier pool is empty")
    classes = tuple(pool[0].classes.tolist())
    for m in pool[1:]:
        if tuple(m.classes.tolist()) != classes:
            raise ValueError("pool members do not share one class list")
    val_preds = np.stack([m.predict(val_features) for m in pool], axis=1)
    if exclude_self:
        test_preds = val_preds
        exclude = np.arange(np.asarray(test_features).shape[0])
    else:
        test_preds = np.stack([m.predict(test_features) for m in pool], axis=1)
        exclude = None
    nbrs = nearest_neighbors(val_features, test_features, k, exclude)
    post_list = np.stack([m.predict_proba(test_features) for m in pool])
    post, weights = knorau_combine(nbrs, val_preds, val_labels, test_preds, post_list, classes)
    return PosteriorMatrix(post, classes), weights
