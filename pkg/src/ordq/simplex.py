"""Probability-simplex arithmetic.

Distributions are plain 1-D float arrays whose entries are non-negative and
sum to one. Latent vectors are length-n arrays with the first entry pinned
to zero; ``softmax`` maps them onto the interior of the simplex.
"""
from __future__ import annotations

import numpy as np

from .exceptions import DimensionError, UnsupportedOrder, ZeroComponent

SUM_TOL = 1e-9


def is_distribution(p, tol: float = SUM_TOL) -> bool:
    p = np.asarray(p, dtype=float)
    return bool(
        p.ndim == 1
        and np.all(np.isfinite(p))
        and np.all(p >= 0)
        and abs(p.sum() - 1.0) <= tol
    )


def check_distribution(p, tol: float = SUM_TOL) -> np.ndarray:
    """Return ``p`` as a float array, raising ``ValueError`` if it is not on the simplex."""
    p = np.asarray(p, dtype=float)
    if not is_distribution(p, tol):
        raise ValueError(f"not a distribution: {p!r}")
    return p


def softmax(l) -> np.ndarray:
    l = np.asarray(l, dtype=float)
    e = np.exp(l - l.max())
    return e / e.sum()


def latent_of(p) -> np.ndarray:
    """Inverse of :func:`softmax` under the convention ``l[0] == 0``."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise ZeroComponent("latent_of requires strictly positive components")
    return np.log(p) - np.log(p[0])


def sample_uniform(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one prevalence vector uniformly from the (n-1)-simplex.

    Kraemer's method: the gaps between sorted uniform variates, padded with 0
    and 1, are uniformly distributed on the simplex.
    """
    if n < 2:
        raise DimensionError("sample_uniform requires n >= 2")
    u = np.sort(rng.random(n - 1))
    return np.diff(np.concatenate(([0.0], u, [1.0])))


def sample_uniform_many(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised :func:`sample_uniform`; returns a ``(size, n)`` array."""
    if n < 2:
        raise DimensionError("sample_uniform requires n >= 2")
    u = np.sort(rng.random((size, n - 1)), axis=1)
    pad = np.zeros((size, 1))
    return np.diff(np.hstack((pad, u, pad + 1.0)), axis=1)


def _jaggedness_terms(P: np.ndarray, k: int) -> np.ndarray:
    if k == 0:
        return P[..., :-1] - P[..., 1:]
    if k == 1:
        return -P[..., :-2] + 2 * P[..., 1:-1] - P[..., 2:]
    if k == 2:
        return 3 * P[..., 1:-2] - 3 * P[..., 2:-1] + P[..., 3:] - P[..., :-3]
    raise UnsupportedOrder(f"jaggedness is defined for k in {{0, 1, 2}}, got {k}")


def jaggedness_factor(n: int, k: int) -> float:
    if k == 0:
        return 1 / 2
    if k == 1:
        return 1 / min(6, n + 1)
    if k == 2:
        return 1 / 8
    raise UnsupportedOrder(f"jaggedness is defined for k in {{0, 1, 2}}, got {k}")


def jaggedness(p, k: int = 1):
    """Normalised squared deviation of ``p`` from a degree-``k`` polynomial.

    Accepts a single distribution or a 2-D array with one distribution per
    row (then returns one value per row). Orders 0 and 1 range in [0, 1];
    with its fixed 1/8 factor, order 2 reaches 2.5 at interior vertices.
    """
    P = np.asarray(p, dtype=float)
    n = P.shape[-1]
    factor = jaggedness_factor(n, k)
    if n < k + 2:
        raise DimensionError(f"order {k} jaggedness needs n >= {k + 2}, got n={n}")
    terms = _jaggedness_terms(P, k)
    return factor * np.sum(terms**2, axis=-1)


def tikhonov(n: int, k: int = 1) -> np.ndarray:
    """Tikhonov matrix ``C_k`` of shape ``(n - 1 - k, n)``.

    Built from the square first-difference matrix ``C'`` by iterated products
    ``C', C'^T C', (C'^T C')^T C', ...``; the rows distorted by the boundary
    are dropped (``floor((k+1)/2)`` at the top and ``ceil((k+1)/2)`` at the
    bottom). The surviving rows are shifts of the order-(k+1) finite
    difference stencil; k=1 yields rows ``(-1, 2, -1)``.
    """
    if k < 0:
        raise UnsupportedOrder(f"order must be >= 0, got {k}")
    if n < k + 2:
        raise DimensionError(f"tikhonov(n={n}, k={k}) requires n >= k + 2")
    base = np.eye(n) - np.eye(n, k=1)
    prod = base
    for _ in range(k):
        prod = prod.T @ base
    top = (k + 1) // 2
    bottom = k + 1 - top
    C = prod[top : n - bottom]
    # the integer products are exact; strip negative zeros for clean output
    return C + 0.0


def regularizer(p, C: np.ndarray, tau: float) -> float:
    """Tikhonov penalty ``(tau / 2) * ||C p||^2``."""
    p = np.asarray(p, dtype=float)
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[1] != p.shape[-1]:
        raise DimensionError(f"C has shape {C.shape}, p has length {p.shape[-1]}")
    if tau == 0:
        return 0.0
    r = C @ p
    return 0.5 * tau * float(r @ r)
