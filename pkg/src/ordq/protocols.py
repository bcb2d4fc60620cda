"""Data splitting, APP / APP-OQ sample generation and synthetic ordinal data."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InsufficientData, MissingClass, Unsatisfiable
from .simplex import jaggedness, sample_uniform, sample_uniform_many

APP_OQ_PERCENTS = (66, 50, 33, 20, 5)
MAX_REJECTIONS = 1000


@dataclass(frozen=True)
class DrawnSample:
    indices: np.ndarray
    target_prevalence: np.ndarray
    realized_prevalence: np.ndarray
    rejections: int = 0

    @property
    def size(self) -> int:
        return self.indices.size


@dataclass(frozen=True)
class ProtocolConfig:
    n_samples: int
    sample_size: int
    retain_percent: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.sample_size < 1:
            raise ValueError("n_samples and sample_size must be positive")
        if self.retain_percent is not None and not 0 < self.retain_percent <= 100:
            raise ValueError("retain_percent must lie in (0, 100]")


def largest_remainder(weights, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights`` (Hamilton's method).

    Leftover units go to the largest fractional remainders; ties favour the
    lower index.
    """
    w = np.asarray(weights, dtype=float)
    quotas = w / w.sum() * total
    counts = np.floor(quotas).astype(int)
    rest = total - counts.sum()
    if rest > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:rest]] += 1
    return counts


def stratified_split(labels, n_classes: int, train_size: int, val_pool_size: int, test_pool_size: int, seed: int):
    """Three disjoint index arrays (train, validation pool, test pool) with class-proportional allocation."""
    labels = np.asarray(labels)
    class_counts = np.bincount(labels, minlength=n_classes)
    sizes = (train_size, val_pool_size, test_pool_size)
    if sum(sizes) > labels.size:
        raise InsufficientData(f"requested {sum(sizes)} items from {labels.size}")
    alloc = np.array([largest_remainder(class_counts, s) for s in sizes])  # 3 x n
    short = np.flatnonzero(alloc.sum(axis=0) > class_counts)
    if short.size:
        raise InsufficientData(f"classes {short.tolist()} have too few items for the requested split")
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for c in range(n_classes):
        members = rng.permutation(np.flatnonzero(labels == c))
        start = 0
        for s in range(3):
            parts[s].append(members[start : start + alloc[s, c]])
            start += alloc[s, c]
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def draw_from_counts(pool_labels, counts, rng: np.random.Generator) -> np.ndarray:
    """Draw ``counts[c]`` distinct pool positions of each class ``c``."""
    pool_labels = np.asarray(pool_labels)
    chosen = []
    for c, k in enumerate(counts):
        members = np.flatnonzero(pool_labels == c)
        if k > members.size:
            raise InsufficientData(f"class {c}: need {k} items, pool has {members.size}")
        chosen.append(rng.choice(members, size=k, replace=False))
    return np.concatenate(chosen)


def _sample_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng([seed, i])


def draw_app(pool_labels, n_classes: int, cfg: ProtocolConfig) -> list[DrawnSample]:
    """Artificial-prevalence-protocol samples from a pool of labeled items.

    Returned indices are positions in ``pool_labels``. Sample ``i`` uses its
    own generator derived from ``(cfg.seed, i)``. Prevalence vectors whose
    rounded class counts exceed the pool are rejected and redrawn.
    """
    pool_labels = np.asarray(pool_labels)
    available = np.bincount(pool_labels, minlength=n_classes)
    if np.any(available == 0):
        raise MissingClass(f"pool lacks classes {np.flatnonzero(available == 0).tolist()}")
    samples = []
    for i in range(cfg.n_samples):
        rng = _sample_rng(cfg.seed, i)
        for rejections in range(MAX_REJECTIONS + 1):
            if rejections == MAX_REJECTIONS:
                raise Unsatisfiable(f"sample {i}: {MAX_REJECTIONS} consecutive infeasible prevalence draws")
            target = sample_uniform(n_classes, rng)
            counts = largest_remainder(target, cfg.sample_size)
            if np.all(counts <= available):
                break
        idx = draw_from_counts(pool_labels, counts, rng)
        samples.append(DrawnSample(idx, target, counts / cfg.sample_size, rejections))
    if cfg.retain_percent is not None:
        samples = filter_smoothest(samples, cfg.retain_percent)
    return samples


def draw_at_prevalences(pool_labels, n_classes: int, prevalences, sample_size: int, seed: int) -> list[DrawnSample]:
    """One sample per given prevalence vector (the user-supplied "real" protocol)."""
    pool_labels = np.asarray(pool_labels)
    samples = []
    for i, p in enumerate(np.asarray(prevalences, dtype=float)):
        if p.size != n_classes:
            raise ValueError(f"prevalence vector {i} has {p.size} entries, expected {n_classes}")
        rng = _sample_rng(seed, i)
        counts = largest_remainder(p, sample_size)
        idx = draw_from_counts(pool_labels, counts, rng)
        samples.append(DrawnSample(idx, p / p.sum(), counts / sample_size))
    return samples


def smoothest_indices(prevalences, percent: float) -> np.ndarray:
    """Positions of the ``ceil(percent/100 * len)`` rows with the lowest jaggedness, ascending.

    Ties keep the original order.
    """
    if not 0 < percent <= 100:
        raise ValueError("percent must lie in (0, 100]")
    P = np.asarray(prevalences, dtype=float)
    if P.shape[0] == 0:
        return np.zeros(0, dtype=int)
    xi = jaggedness(P, 1)
    keep = math.ceil(percent / 100 * len(P))
    return np.sort(np.argsort(xi, kind="stable")[:keep])


def filter_smoothest(samples: list[DrawnSample], percent: float) -> list[DrawnSample]:
    """Keep the ``ceil(percent/100 * len)`` samples with the lowest jaggedness.

    Ranking uses the realized prevalence; ties keep draw order, and the
    survivors are returned in their original order.
    """
    if not 0 < percent <= 100:
        raise ValueError("percent must lie in (0, 100]")
    if not samples:
        return []
    chosen = smoothest_indices([s.realized_prevalence for s in samples], percent)
    return [samples[i] for i in chosen]


def protocol_statistics(n: int, draws: int, percents=APP_OQ_PERCENTS, seed: int = 0, train_prevalence=None) -> list[dict]:
    """Mean jaggedness and mean prior shift of APP and APP-OQ prevalence vectors.

    Works on Kraemer draws directly, independent of any dataset.
    """
    from .metrics import nmd

    rng = np.random.default_rng(seed)
    P = sample_uniform_many(n, draws, rng)
    xi = jaggedness(P, 1)
    ref = np.full(n, 1.0 / n) if train_prevalence is None else np.asarray(train_prevalence, dtype=float)
    shift = nmd(np.broadcast_to(ref, P.shape), P)
    order = np.argsort(xi, kind="stable")
    rows = [{"protocol": "APP", "percent": 100.0, "xi1": float(xi.mean()), "nmd_shift": float(shift.mean())}]
    for x in percents:
        keep = order[: math.ceil(x / 100 * draws)]
        rows.append({
            "protocol": f"APP-OQ({x:g}%)",
            "percent": float(x),
            "xi1": float(xi[keep].mean()),
            "nmd_shift": float(shift[keep].mean()),
        })
    return rows


def choose_percent(reference_xi1: float, n: int, draws: int = 10000, seed: int = 0, percents=APP_OQ_PERCENTS) -> float:
    """APP-OQ percent whose Monte-Carlo mean jaggedness is closest to ``reference_xi1``."""
    rows = protocol_statistics(n, draws, percents, seed)[1:]
    best = min(rows, key=lambda r: abs(r["xi1"] - reference_xi1))
    return best["percent"]


def synth_ordinal(n: int, d: int, size: int, overlap: float, class_prevalence=None, seed: int = 0):
    """Gaussian clouds with class means ordered along the first feature axis.

    Class ``i`` is centred at ``i`` on axis 0 (0 elsewhere) with isotropic
    standard deviation ``overlap``, so adjacent classes are the most
    confusable. Returns ``(X, y)`` with 0-based labels in shuffled order.
    """
    if n < 3 or d < 1:
        raise ValueError("synth_ordinal needs n >= 3 and d >= 1")
    if overlap <= 0:
        raise ValueError("overlap must be positive")
    prev = np.full(n, 1.0 / n) if class_prevalence is None else np.asarray(class_prevalence, dtype=float)
    counts = largest_remainder(prev, size)
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(n), counts)
    means = np.zeros((size, d))
    means[:, 0] = y + 1
    X = means + overlap * rng.standard_normal((size, d))
    perm = rng.permutation(size)
    return X[perm], y[perm]
