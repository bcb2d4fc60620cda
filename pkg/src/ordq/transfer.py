"""Feature representations and the (q, M) pairs they induce.

Every quantifier in this package solves ``q = M p`` for some representation
``f``: ``q`` is the mean of ``f(x)`` over the unlabeled sample and column ``i``
of ``M`` is the mean of ``f(x)`` over validation items of class ``i``. The
layout is always ``D x n`` (rows are representation dimensions, columns are
classes).

Each representation has an ``embed_*`` function mapping items to ``f(x)``
rows; the public builders combine it with :func:`class_means`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import DegenerateFeature, DimensionError, MissingClass

REPRESENTATIONS = (
    "hard",
    "soft",
    "feature_hist",
    "posterior_hist",
    "energy",
    "ranking_hist",
    "partition",
)


@dataclass
class TransferModel:
    q: np.ndarray
    M: np.ndarray
    representation: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")
        # C order keeps matrix products bitwise reproducible across serialisation round trips
        self.q = np.ascontiguousarray(self.q, dtype=float)
        self.M = np.ascontiguousarray(self.M, dtype=float)
        if self.M.ndim != 2 or self.q.shape != (self.M.shape[0],):
            raise DimensionError(f"q has shape {self.q.shape}, M has shape {self.M.shape}")

    @property
    def n(self) -> int:
        return self.M.shape[1]

    def with_q(self, q) -> "TransferModel":
        return TransferModel(q, self.M, self.representation, self.metadata)


def class_means(F, labels, n_classes: int) -> np.ndarray:
    """Per-class means of the rows of ``F``, stacked as columns (``D x n``)."""
    F = np.asarray(F, dtype=float)
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_classes)
    if np.any(counts == 0):
        raise MissingClass(f"classes {np.flatnonzero(counts == 0).tolist()} absent from validation data")
    sums = np.zeros((n_classes, F.shape[1]))
    np.add.at(sums, labels, F)
    return (sums / counts[:, None]).T


# --- hard / soft ---------------------------------------------------------------


def embed_hard(pred, n_classes: int) -> np.ndarray:
    return np.eye(n_classes)[np.asarray(pred)]


def hard_counts(pred_sample, pred_val, labels_val, n_classes: int) -> TransferModel:
    """Classify-and-count fractions and the misclassification-rate matrix."""
    M = class_means(embed_hard(pred_val, n_classes), labels_val, n_classes)
    q = embed_hard(pred_sample, n_classes).mean(axis=0)
    return TransferModel(q, M, "hard")


def soft_means(proba_sample, proba_val, labels_val) -> TransferModel:
    proba_val = np.asarray(proba_val, dtype=float)
    n = proba_val.shape[1]
    M = class_means(proba_val, labels_val, n)
    q = np.asarray(proba_sample, dtype=float).mean(axis=0)
    return TransferModel(q, M, "soft")


# --- histograms ----------------------------------------------------------------


def bin_index(values, lo, hi, bins: int) -> np.ndarray:
    """Equal-width bins on ``[lo, hi]``; out-of-range values clamp to the end bins."""
    values = np.asarray(values, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(int)
    return np.clip(idx, 0, bins - 1)


def histogram_embedding(values, lo, hi, bins: int) -> np.ndarray:
    """One-hot bin membership per column of ``values``, concatenated row-major.

    ``values`` is ``N x d``; the result is ``N x (d * bins)`` where entries
    ``[j*bins:(j+1)*bins]`` belong to column ``j``.
    """
    values = np.asarray(values, dtype=float)
    N, d = values.shape
    idx = bin_index(values, lo, hi, bins)
    out = np.zeros((N, d * bins))
    out[np.arange(N)[:, None], np.arange(d)[None, :] * bins + idx] = 1.0
    return out


def feature_edges(features_train) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature ``(min, max)`` over the training set."""
    X = np.asarray(features_train, dtype=float)
    lo, hi = X.min(axis=0), X.max(axis=0)
    constant = np.flatnonzero(hi <= lo)
    if constant.size:
        raise DegenerateFeature(f"features {constant.tolist()} are constant; cannot bin them")
    return lo, hi


def feature_histograms(features_sample, features_val, labels_val, n_classes: int, bins: int, edges=None) -> TransferModel:
    """Per-feature histograms (HDx representation).

    ``edges`` is a ``(lo, hi)`` pair of per-feature bounds; by default it is
    taken from ``features_val``, which doubles as the training set when
    cross-validation is used.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    features_val = np.asarray(features_val, dtype=float)
    lo, hi = feature_edges(features_val) if edges is None else edges
    M = class_means(histogram_embedding(features_val, lo, hi, bins), labels_val, n_classes)
    q = histogram_embedding(np.asarray(features_sample, dtype=float), lo, hi, bins).mean(axis=0)
    return TransferModel(
        q, M, "feature_hist",
        {"bins": bins, "lo": np.asarray(lo, dtype=float), "hi": np.asarray(hi, dtype=float)},
    )


def embed_posterior_hist(proba, bins: int) -> np.ndarray:
    return histogram_embedding(proba, 0.0, 1.0, bins)


def posterior_histograms(proba_sample, proba_val, labels_val, bins: int) -> TransferModel:
    """Per-class histograms of posterior coordinates on ``[0, 1]`` (HDy representation)."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    proba_val = np.asarray(proba_val, dtype=float)
    n = proba_val.shape[1]
    M = class_means(embed_posterior_hist(proba_val, bins), labels_val, n)
    q = embed_posterior_hist(np.asarray(proba_sample, dtype=float), bins).mean(axis=0)
    return TransferModel(q, M, "posterior_hist", {"bins": bins})


def ranking(proba) -> np.ndarray:
    """Expected class index ``r(x) = sum_i i * s_i(x)`` with 1-based classes."""
    proba = np.asarray(proba, dtype=float)
    return proba @ np.arange(1, proba.shape[-1] + 1)


def embed_ranking(proba, bins: int) -> np.ndarray:
    proba = np.asarray(proba, dtype=float)
    n = proba.shape[1]
    return histogram_embedding(ranking(proba)[:, None], 1.0, float(n), bins)


def ranking_histogram(proba_sample, proba_val, labels_val, bins: int) -> TransferModel:
    """Histogram of the ranking value over ``[1, n]`` (PDF representation)."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    proba_val = np.asarray(proba_val, dtype=float)
    n = proba_val.shape[1]
    M = class_means(embed_ranking(proba_val, bins), labels_val, n)
    q = embed_ranking(np.asarray(proba_sample, dtype=float), bins).mean(axis=0)
    return TransferModel(q, M, "ranking_hist", {"bins": bins})


# --- energy ----------------------------------------------------------------------


def _md_matrix(A, B) -> np.ndarray:
    """Pairwise match distances between the rows of two posterior matrices."""
    cA = np.cumsum(A, axis=1)[:, :-1]
    cB = np.cumsum(B, axis=1)[:, :-1]
    return cdist(cA, cB, metric="cityblock")


def energy_reference(proba_val, labels_val, cap: int | None = None, seed: int = 0) -> list[np.ndarray]:
    """Validation posteriors grouped by class, optionally subsampled to ``cap`` items each."""
    proba_val = np.asarray(proba_val, dtype=float)
    labels_val = np.asarray(labels_val)
    n = proba_val.shape[1]
    rng = np.random.default_rng(seed)
    groups = []
    for c in range(n):
        members = np.flatnonzero(labels_val == c)
        if members.size == 0:
            raise MissingClass(f"class {c} absent from validation data")
        if cap is not None and members.size > cap:
            members = np.sort(rng.choice(members, size=cap, replace=False))
        groups.append(proba_val[members])
    return groups


def embed_energy(proba, reference: list[np.ndarray]) -> np.ndarray:
    """Mean match distance from each item to the validation items of each class."""
    proba = np.asarray(proba, dtype=float)
    return np.column_stack([_md_matrix(proba, g).mean(axis=1) for g in reference])


def energy_matrix(reference: list[np.ndarray]) -> np.ndarray:
    n = len(reference)
    M = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            M[i, j] = M[j, i] = _md_matrix(reference[i], reference[j]).mean()
    return M


def energy_features(proba_sample, proba_val, labels_val, cap: int | None = None, seed: int = 0) -> TransferModel:
    """Mean pairwise match distances between sample and class-wise validation posteriors (EDy)."""
    reference = energy_reference(proba_val, labels_val, cap, seed)
    q = embed_energy(proba_sample, reference).mean(axis=0)
    return TransferModel(q, energy_matrix(reference), "energy", {"reference": reference})
