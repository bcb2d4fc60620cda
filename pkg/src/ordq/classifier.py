"""Multinomial logistic regression trained by full-batch gradient descent.

Supplies the soft classifier s(x), the hard classifier h(x), and
out-of-fold posteriors for estimating transfer matrices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateData, DimensionError, TooFewPerClass


@dataclass(frozen=True)
class SoftClassifier:
    """Affine scores followed by softmax.

    ``weights`` has shape ``(n, d + 1)``; the last column is the bias.
    """

    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.ascontiguousarray(self.weights, dtype=float))

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1] - 1


def _check_labels(y, n_classes):
    y = np.asarray(y)
    if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
        raise DimensionError("labels must be a 1-D integer array")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise DimensionError(f"labels must lie in 0..{n_classes - 1}")
    return y


def class_weights(y, n_classes: int) -> np.ndarray:
    """Inverse class frequency per item, normalised to mean 1 over the items."""
    counts = np.bincount(y, minlength=n_classes).astype(float)
    w = 1.0 / counts[y]
    return w / w.mean()


def objective(W, X, Y, sample_weight, l2_strength):
    """Weighted mean cross-entropy plus ``(l2/2)||W_nobias||^2`` and its gradient.

    ``X`` already carries a trailing column of ones; ``Y`` is one-hot.
    """
    Z = X @ W.T
    Z -= Z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(Z).sum(axis=1, keepdims=True))
    logP = Z - logsum
    wsum = sample_weight.sum()
    loss = -np.sum(sample_weight[:, None] * Y * logP) / wsum
    G = ((np.exp(logP) - Y) * sample_weight[:, None]).T @ X / wsum
    if l2_strength:
        Wf = W[:, :-1]
        loss += 0.5 * l2_strength * np.sum(Wf * Wf)
        G[:, :-1] += l2_strength * Wf
    return loss, G


def train(
    X,
    y,
    n_classes: int,
    l2_strength: float = 1e-3,
    class_weighting: bool = False,
    max_epochs: int = 5000,
    tol: float = 1e-6,
    trace: list | None = None,
) -> SoftClassifier:
    """Fit an L2-regularised multinomial logistic regression.

    Features are standardised internally and the learned weights are mapped
    back, so the returned classifier acts on raw features. Optimisation is
    gradient descent with Armijo backtracking, started from zero weights and
    stopped once the gradient norm drops below ``tol``.

    :param trace: if given, the accepted objective values are appended to it
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise DimensionError("features must be an N x d matrix with d >= 1")
    if not np.all(np.isfinite(X)):
        raise DimensionError("features must be finite")
    y = _check_labels(y, n_classes)
    if y.size != X.shape[0]:
        raise DimensionError("features and labels differ in length")
    counts = np.bincount(y, minlength=n_classes)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise DegenerateData(f"classes {missing} have no training items")

    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Xs = np.hstack(((X - mu) / sd, np.ones((X.shape[0], 1))))
    Y = np.eye(n_classes)[y]
    sw = class_weights(y, n_classes) if class_weighting else np.ones(y.size)

    W = np.zeros((n_classes, Xs.shape[1]))
    loss, G = objective(W, Xs, Y, sw, l2_strength)
    if trace is not None:
        trace.append(loss)
    step = 1.0
    for _ in range(max_epochs):
        gnorm2 = float(np.sum(G * G))
        if np.sqrt(gnorm2) <= tol:
            break
        step *= 2.0
        while True:
            W_new = W - step * G
            loss_new, G_new = objective(W_new, Xs, Y, sw, l2_strength)
            if loss_new <= loss - 1e-4 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        if loss_new > loss:
            break
        W, loss, G = W_new, loss_new, G_new
        if trace is not None:
            trace.append(loss)

    coef = W[:, :-1] / sd
    bias = W[:, -1] - coef @ mu
    return SoftClassifier(np.hstack((coef, bias[:, None])))


def _as_matrix(clf: SoftClassifier, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != clf.d:
        raise DimensionError(f"expected {clf.d} features, got shape {x.shape}")
    return X, single


def predict_proba(clf: SoftClassifier, x) -> np.ndarray:
    """Posterior probabilities for one feature vector or a matrix of them."""
    X, single = _as_matrix(clf, x)
    Z = X @ clf.weights[:, :-1].T + clf.weights[:, -1]
    Z -= Z.max(axis=1, keepdims=True)
    P = np.exp(Z)
    P /= P.sum(axis=1, keepdims=True)
    return P[0] if single else P


def predict(clf: SoftClassifier, x):
    """Hard predictions; ties go to the lowest class index."""
    P = predict_proba(clf, x)
    return np.argmax(P, axis=-1)


def stratified_folds(y, n_classes: int, k: int, seed: int) -> np.ndarray:
    """Fold index per item; per-fold class counts differ by at most one.

    Items of each class are shuffled and dealt round-robin, continuing the
    deal across classes so that fold sizes also stay balanced.
    """
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    folds = np.empty(y.size, dtype=int)
    offset = 0
    for c in range(n_classes):
        members = rng.permutation(np.flatnonzero(y == c))
        folds[members] = (offset + np.arange(members.size)) % k
        offset = (offset + members.size) % k
    return folds


def cross_val_proba(X, y, n_classes: int, k: int = 10, seed: int = 0, **train_kwargs) -> np.ndarray:
    """Out-of-fold posteriors from ``k``-fold stratified cross-validation.

    :raises TooFewPerClass: if some training fold would miss a class
    """
    X = np.asarray(X, dtype=float)
    y = _check_labels(y, n_classes)
    if k < 2 or k > y.size:
        raise TooFewPerClass(f"need 2 <= k <= N, got k={k}, N={y.size}")
    counts = np.bincount(y, minlength=n_classes)
    if np.any(counts < 2):
        raise TooFewPerClass(
            f"every class needs at least 2 items for cross-validation, counts={counts.tolist()}"
        )
    folds = stratified_folds(y, n_classes, k, seed)
    out = np.empty((y.size, n_classes))
    for f in range(k):
        test = folds == f
        if not test.any():
            continue
        clf = train(X[~test], y[~test], n_classes, **train_kwargs)
        out[test] = predict_proba(clf, X[test])
    return out
