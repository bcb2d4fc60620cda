"""Error measures for ordinal quantification and paired significance testing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, Empty, TooFewPairs

MEASURES = ("NMD", "RNOD")


@dataclass(frozen=True)
class ScoreSeries:
    """Per-sample error values of one method under one measure."""

    method: str
    scores: np.ndarray = field(repr=False)
    measure: str = "NMD"

    def __post_init__(self):
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=float))
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}")
        if np.any(self.scores < 0):
            raise ValueError("scores must be non-negative")


def _pair(p, p_hat):
    p = np.asarray(p, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    if p.shape[-1] != p_hat.shape[-1]:
        raise DimensionError(f"length mismatch: {p.shape[-1]} vs {p_hat.shape[-1]}")
    return p, p_hat


def match_distance(p, p_hat):
    """Match distance with unit distances between adjacent classes.

    Works row-wise on 2-D inputs.
    """
    p, p_hat = _pair(p, p_hat)
    gaps = np.cumsum(p_hat, axis=-1) - np.cumsum(p, axis=-1)
    return np.sum(np.abs(gaps[..., :-1]), axis=-1)


def nmd(p, p_hat):
    """Normalized match distance in [0, 1]."""
    p, p_hat = _pair(p, p_hat)
    return match_distance(p, p_hat) / (p.shape[-1] - 1)


def rnod(p, p_hat) -> float:
    """Root normalized order-aware divergence, with ``d(y_j, y_i) = |j - i|``."""
    p, p_hat = _pair(p, p_hat)
    n = p.shape[-1]
    support = np.flatnonzero(p > 0)
    if support.size == 0:
        raise ValueError("rnod requires a true distribution with positive mass")
    idx = np.arange(n)
    dist = np.abs(idx[None, :] - support[:, None])  # |Y*| x n
    sq = (p - p_hat) ** 2
    return math.sqrt(float(np.sum(dist * sq[None, :])) / (support.size * (n - 1)))


MEASURE_FUNCTIONS = {"NMD": nmd, "RNOD": rnod}


def _scores(x) -> np.ndarray:
    return np.asarray(getattr(x, "scores", x), dtype=float)


def _average_ranks(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ranks starting at 1 with ties sharing their mean rank; also returns tie-group sizes."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    boundaries = np.flatnonzero(np.diff(sorted_vals) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [values.size]))
    ranks = np.empty(values.size)
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2
    return ranks, ends - starts


def wilcoxon_signed_rank(a, b, min_pairs: int = 10) -> float:
    """Two-sided p-value of the paired Wilcoxon signed-rank test.

    Zero differences are discarded, tied absolute differences get average
    ranks, and the statistic is standardised with a tie-corrected variance
    (normal approximation, no continuity correction).

    :param a: scores of the first method (array or :class:`ScoreSeries`)
    :param b: scores of the second method, paired with ``a``
    :raises TooFewPairs: if fewer than ``min_pairs`` non-zero differences remain
    """
    a, b = _scores(a), _scores(b)
    if a.shape != b.shape:
        raise DimensionError("paired series must have equal length")
    d = a - b
    d = d[d != 0]
    m = d.size
    if m < min_pairs:
        raise TooFewPairs(f"only {m} non-zero differences (need {min_pairs})")
    ranks, ties = _average_ranks(np.abs(d))
    w_plus = ranks[d > 0].sum()
    mean = m * (m + 1) / 4
    var = m * (m + 1) * (2 * m + 1) / 24 - np.sum(ties**3 - ties) / 48
    if var <= 0:
        return 1.0
    z = (w_plus - mean) / math.sqrt(var)
    return min(1.0, math.erfc(abs(z) / math.sqrt(2)))


def summarize(series) -> tuple[float, float]:
    """Mean and population standard deviation of a score series."""
    s = _scores(series)
    if s.size == 0:
        raise Empty("cannot summarize an empty score series")
    return float(np.mean(s)), float(np.std(s))
