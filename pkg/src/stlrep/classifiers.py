"""Supervised learners: linear SVM, CART trees, bagging, random forest and
multinomial logistic regression.

Every model keeps the sorted array of class ids it was trained on and
returns posteriors with one column per class in that order.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.special import log_softmax, softmax

from . import container
from ._kernels import active as _k
from .numerics import RandomStream


def _check_xy(X, y, min_classes=1):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("training data is empty")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    classes = np.unique(y)
    if classes.size < min_classes:
        raise ValueError(f"need at least {min_classes} classes in the training labels, found {classes.size}")
    return X, y, classes


def _stream(seed):
    return seed if isinstance(seed, RandomStream) else RandomStream(int(seed))


class TrainedClassifier:
    kind = "base"

    def __init__(self, classes):
        self.classes = np.asarray(classes, dtype=np.int64)

    def predict_proba(self, X):
        raise NotImplementedError

    def predict(self, X):
        return self.classes[np.argmax(self.predict_proba(X), axis=1)]


def predict_proba(model: TrainedClassifier, X, classes=None):
    """Posterior rows; with ``classes`` the columns are expanded to that list
    (classes unseen in training get probability 0)."""
    p = model.predict_proba(np.asarray(X, dtype=np.float64))
    if classes is None:
        return p
    classes = np.asarray(classes)
    out = np.zeros((p.shape[0], classes.size))
    pos = np.searchsorted(classes, model.classes)
    if np.any(pos >= classes.size) or np.any(classes[np.minimum(pos, classes.size - 1)] != model.classes):
        raise ValueError(f"model classes {model.classes.tolist()} not contained in {classes.tolist()}")
    out[:, pos] = p
    return out


# --------------------------------------------------------------------- SVM


class LinearSVM(TrainedClassifier):
    kind = "svm"

    def __init__(self, classes, coef, intercept, scale, temperature):
        super().__init__(classes)
        self.coef = coef  # (width, n_classes)
        self.intercept = intercept
        self.scale = float(scale)
        self.temperature = float(temperature)

    def decision_function(self, X):
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept

    def predict_proba(self, X):
        return softmax(self.temperature * self.decision_function(X) / self.scale, axis=1)


def balanced_weights(y, classes):
    """Per-sample weights M / (n_classes * M_c)."""
    counts = np.array([(y == c).sum() for c in classes], dtype=np.float64)
    per_class = y.shape[0] / (classes.size * counts)
    return per_class[np.searchsorted(classes, y)]


def svm_train(X, y, C=1e-6, class_weight="balanced", max_iter=10_000) -> LinearSVM:
    """One-vs-rest linear SVMs fit by averaged sub-gradient descent.

    Minimises ``0.5*|w_c|^2 + C * sum_i s_i * hinge(y_ic * (x_i.w_c + b_c))``
    for every class c at once, with step 1/t and the average of the second
    half of the iterates. Posteriors are a softmax over the decision values
    with a single temperature fit by likelihood on the training data.
    """
    X, y, classes = _check_xy(X, y, min_classes=2)
    if C <= 0:
        raise ValueError(f"C must be positive, got {C}")
    if class_weight == "balanced":
        s = balanced_weights(y, classes)
    elif class_weight is None:
        s = np.ones(y.shape[0])
    else:
        raise ValueError(f"class_weight must be 'balanced' or None, got {class_weight!r}")
    m, width = X.shape
    K = classes.size
    sign = np.where(y[:, None] == classes[None, :], 1.0, -1.0)
    cs = C * s[:, None] * sign
    W = np.zeros((width, K))
    b = np.zeros(K)
    W_avg = np.zeros_like(W)
    b_avg = np.zeros_like(b)
    start = max_iter // 2
    for t in range(1, max_iter + 1):
        active = sign * (X @ W + b) < 1.0
        coef = np.where(active, cs, 0.0)
        eta = 1.0 / t
        W = W - eta * (W - X.T @ coef)
        b = b + eta * coef.sum(axis=0)
        if t > start:
            W_avg += W
            b_avg += b
    n_avg = max_iter - start
    W = W_avg / n_avg
    b = b_avg / n_avg
    f = X @ W + b
    scale = float(np.std(f))
    if not scale > 1e-300:
        scale = 1.0
    z = f / scale
    idx = np.searchsorted(classes, y)

    def nll(log_t):
        return -np.mean(log_softmax(math.exp(log_t) * z, axis=1)[np.arange(m), idx])

    res = minimize_scalar(nll, bounds=(-7.0, 7.0), method="bounded", options={"xatol": 1e-6})
    return LinearSVM(classes, W, b, scale, math.exp(res.x))


# -------------------------------------------------------------------- trees


class DecisionTree(TrainedClassifier):
    """Flat-array CART tree; leaves have ``feature == -1``."""

    kind = "tree"

    def __init__(self, classes, feature, threshold, left, right, value):
        super().__init__(classes)
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value

    @property
    def depth(self):
        depth = np.zeros(self.feature.size, dtype=np.int64)
        for i in range(self.feature.size):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            rows = np.nonzero(inner)[0]
            go_left = X[rows, f[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def predict_proba(self, X):
        return self.value[self.apply(X)]


def _n_features(max_features, width):
    if max_features in (None, "all"):
        return width
    if max_features == "sqrt":
        return max(1, int(math.floor(math.sqrt(width))))
    if isinstance(max_features, (int, np.integer)) and max_features >= 1:
        return min(int(max_features), width)
    raise ValueError(f"invalid max_features {max_features!r}")


def tree_train(X, y, max_depth=10, max_features="sqrt", seed=0, sample_weight=None, classes=None) -> DecisionTree:
    """Gini CART tree grown depth-first.

    At every node ``max_features`` candidate features are drawn without
    replacement among the features that are not constant on the node. A
    node becomes a leaf when pure, at ``max_depth``, or with fewer than two
    samples.
    """
    X, y, seen = _check_xy(X, y)
    if max_depth is None or max_depth < 1:
        raise ValueError(f"max_depth must be >= 1, got {max_depth}")
    classes = seen if classes is None else np.asarray(classes, dtype=np.int64)
    w = np.ones(X.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    keep = w > 0
    X, y, w = X[keep], y[keep], w[keep]
    yi = np.searchsorted(classes, y)
    K = classes.size
    n_try = _n_features(max_features, X.shape[1])
    rng = _stream(seed)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        counts = np.bincount(yi[idx], weights=w[idx], minlength=K)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts / counts.sum())
        return len(feature) - 1

    stack = [(np.arange(X.shape[0]), 0, new_node(np.arange(X.shape[0])))]
    while stack:
        idx, depth, node = stack.pop()
        if depth >= max_depth or idx.size < 2 or np.count_nonzero(value[node]) <= 1:
            continue
        xn = X[idx]
        varying = np.nonzero(xn.max(axis=0) > xn.min(axis=0))[0]
        if varying.size == 0:
            continue
        cand = varying[rng.sample_without_replacement(varying.size, min(n_try, varying.size))]
        col, thr, _ = _k.best_split(np.ascontiguousarray(xn[:, cand]), yi[idx], w[idx], K)
        if col < 0:
            continue
        f = int(cand[col])
        go_left = xn[:, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((ri, depth + 1, right[node]))
        stack.append((li, depth + 1, left[node]))
    return DecisionTree(classes, np.array(feature, dtype=np.int64), np.array(threshold),
                        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), np.array(value))


# ---------------------------------------------------------------- ensembles


class TreeEnsemble(TrainedClassifier):
    """Bagged trees; the posterior is the mean of the member posteriors."""

    def __init__(self, kind, classes, trees, oob_score=None):
        super().__init__(classes)
        self.kind = kind
        self.trees = list(trees)
        self.oob_score = oob_score

    def predict_proba(self, X):
        acc = np.zeros((np.asarray(X).shape[0], self.classes.size))
        for t in self.trees:
            acc += t.predict_proba(X)
        return acc / len(self.trees)

    def member_predictions(self, X):
        """(n_samples, n_members) matrix of member class predictions."""
        return np.stack([t.predict(X) for t in self.trees], axis=1)


def _bagged_trees(X, y, n_estimators, sample_fraction, max_depth, max_features, seed, bootstrap, purpose):
    X, y, classes = _check_xy(X, y)
    if n_estimators < 1:
        raise ValueError(f"n_estimators must be >= 1, got {n_estimators}")
    if not 0 < sample_fraction <= 1:
        raise ValueError(f"sample_fraction must lie in (0, 1], got {sample_fraction}")
    m = X.shape[0]
    n_draw = max(1, int(round(sample_fraction * m)))
    root = _stream(seed)
    trees, counts = [], []
    for i in range(n_estimators):
        s = root.child(purpose, i)
        if bootstrap:
            c = np.bincount(s.child("bootstrap").integers(0, m, size=n_draw), minlength=m).astype(np.float64)
        else:
            c = np.ones(m)
        trees.append(tree_train(X, y, max_depth, max_features, s.child("tree"), sample_weight=c, classes=classes))
        counts.append(c)
    return X, y, classes, trees, counts


def bagging_train(X, y, n_estimators=100, sample_fraction=1.0, max_depth=10, max_features="sqrt",
                  seed=0, bootstrap=True) -> TreeEnsemble:
    """Bagging of CART trees, each grown on a bootstrap sample of size ``sample_fraction * M``."""
    _, _, classes, trees, _ = _bagged_trees(X, y, n_estimators, sample_fraction, max_depth, max_features,
                                            seed, bootstrap, "bagging-member")
    return TreeEnsemble("bagging", classes, trees)


def forest_train(X, y, n_trees=100, max_depth=10, max_features="sqrt", oob=True, seed=0) -> TreeEnsemble:
    """Random forest with optional out-of-bag accuracy.

    The OOB score is the accuracy of the majority vote of the trees for
    which a sample was out of bag, over samples with at least one such vote.
    """
    X, y, classes, trees, counts = _bagged_trees(X, y, n_trees, 1.0, max_depth, max_features, seed, True,
                                                 "forest-member")
    model = TreeEnsemble("forest", classes, trees)
    if oob:
        votes = np.zeros((X.shape[0], classes.size))
        yi = np.searchsorted(classes, y)
        for t, c in zip(trees, counts):
            out = c == 0
            if out.any():
                pred = np.argmax(t.predict_proba(X[out]), axis=1)
                votes[np.nonzero(out)[0], pred] += 1
        has = votes.sum(axis=1) > 0
        model.oob_score = float(np.mean(np.argmax(votes[has], axis=1) == yi[has])) if has.any() else None
    return model


# ------------------------------------------------------- logistic regression


class LogisticRegression(TrainedClassifier):
    kind = "logreg"

    def __init__(self, classes, coef, intercept, loss_trace=(), grad_norm=float("nan")):
        super().__init__(classes)
        self.coef = coef  # (width, n_classes)
        self.intercept = intercept
        self.loss_trace = list(loss_trace)
        self.grad_norm = grad_norm

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        return softmax(X @ self.coef + self.intercept, axis=1)


def _logreg_objective(theta, X, Y, C):
    width, K = X.shape[1], Y.shape[1]
    W = theta[: width * K].reshape(width, K)
    b = theta[width * K :]
    logits = X @ W + b
    logp = log_softmax(logits, axis=1)
    loss = -np.sum(Y * logp) + 0.5 / C * np.sum(W * W)
    diff = np.exp(logp) - Y
    grad = np.concatenate([(X.T @ diff + W / C).ravel(), diff.sum(axis=0)])
    return loss, grad


def logreg_train(X, y, C=1.0, max_iter=500, gtol=1e-6) -> LogisticRegression:
    """Multinomial logistic regression, penalty ``|W|^2 / (2C)`` (intercept free), fit by L-BFGS."""
    X, y, classes = _check_xy(X, y, min_classes=2)
    if C <= 0:
        raise ValueError(f"C must be positive, got {C}")
    K = classes.size
    Y = np.zeros((X.shape[0], K))
    Y[np.arange(X.shape[0]), np.searchsorted(classes, y)] = 1.0
    theta0 = np.zeros(X.shape[1] * K + K)
    trace = [_logreg_objective(theta0, X, Y, C)[0]]

    def record(intermediate_result):
        trace.append(float(intermediate_result.fun))

    res = minimize(_logreg_objective, theta0, args=(X, Y, C), jac=True, method="L-BFGS-B", callback=record,
                   options={"maxiter": max_iter, "gtol": gtol, "ftol": 0.0, "maxcor": 10})
    width = X.shape[1]
    _, grad = _logreg_objective(res.x, X, Y, C)
    return LogisticRegression(classes, res.x[: width * K].reshape(width, K), res.x[width * K :],
                              trace, float(np.linalg.norm(grad)))


# ------------------------------------------------------------ serialization


def _tree_tensors(t: DecisionTree, prefix=""):
    return {
        prefix + "feature": t.feature.astype(np.float64),
        prefix + "threshold": t.threshold,
        prefix + "left": t.left.astype(np.float64),
        prefix + "right": t.right.astype(np.float64),
        prefix + "value": t.value,
    }


def _tree_from(classes, tensors, prefix=""):
    as_int = lambda a: a.astype(np.int64)  # noqa: E731
    return DecisionTree(classes, as_int(tensors[prefix + "feature"]), tensors[prefix + "threshold"],
                        as_int(tensors[prefix + "left"]), as_int(tensors[prefix + "right"]),
                        tensors[prefix + "value"])


def save_classifier(model: TrainedClassifier, path):
    header = {"classes": model.classes.tolist()}
    tensors = {}
    if isinstance(model, LinearSVM):
        header.update(scale=model.scale, temperature=model.temperature)
        tensors = {"coef": model.coef, "intercept": model.intercept}
    elif isinstance(model, LogisticRegression):
        tensors = {"coef": model.coef, "intercept": model.intercept}
    elif isinstance(model, DecisionTree):
        tensors = _tree_tensors(model)
    elif isinstance(model, TreeEnsemble):
        header.update(n_trees=len(model.trees), oob_score=model.oob_score)
        for i, t in enumerate(model.trees):
            tensors.update(_tree_tensors(t, f"t{i}."))
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    container.save(path, model.kind, header, tensors)


def load_classifier(path) -> TrainedClassifier:
    kind, header, t = container.load(path, expected_kind=("svm", "logreg", "tree", "bagging", "forest"))
    classes = np.array(header["classes"], dtype=np.int64)
    if kind == "svm":
        return LinearSVM(classes, t["coef"], t["intercept"], header["scale"], header["temperature"])
    if kind == "logreg":
        return LogisticRegression(classes, t["coef"], t["intercept"])
    if kind == "tree":
        return _tree_from(classes, t)
    trees = [_tree_from(classes, t, f"t{i}.") for i in range(header["n_trees"])]
    return TreeEnsemble(kind, classes, trees, header.get("oob_score"))


def train_classifier(kind: str, X, y, params: dict, seed) -> TrainedClassifier:
    """Dispatch by name ("svm", "bagging", "forest", "tree", "logreg")."""
    if kind == "svm":
        return svm_train(X, y, **params)
    if kind == "bagging":
        return bagging_train(X, y, seed=seed, **params)
    if kind == "forest":
        return forest_train(X, y, seed=seed, **params)
    if kind == "tree":
        return tree_train(X, y, seed=seed, **params)
    if kind == "logreg":
        return logreg_train(X, y, **params)
    raise ValueError(f"unknown classifier kind {kind!r}")
