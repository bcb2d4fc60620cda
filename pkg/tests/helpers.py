"""Random transfer models and numerical oracles shared by the solver and acceptance tests."""
import numpy as np

from ordq.simplex import softmax, tikhonov
from ordq.solvers import LossSpec, evaluate_loss
from ordq.transfer import TransferModel, energy_features

REP_OF = {
    "least_squares": "soft",
    "hellinger": "posterior_hist",
    "poisson_run": "hard",
    "energy": "energy",
    "cdf_l2": "ranking_hist",
    "cdf_l1": "ranking_hist",
}


def random_model(kind, n, rng, bins=4):
    """A random column-normalised (q, M) of a shape suited to ``kind``."""
    if kind == "energy":
        # genuine match-distance means keep -p'Mp convex on the simplex
        Pv = rng.dirichlet(np.ones(n), size=8 * n)
        return energy_features(rng.dirichlet(np.ones(n), size=30), Pv, np.arange(8 * n) % n)
    if kind == "hellinger":
        blocks = n
        M = np.vstack([rng.dirichlet(np.ones(bins), size=n).T for _ in range(blocks)])
        q = np.concatenate([rng.dirichlet(np.ones(bins)) for _ in range(blocks)])
        return TransferModel(q, M, "posterior_hist", {"bins": bins})
    D = n + 2
    M = rng.dirichlet(np.ones(D), size=n).T
    q = rng.dirichlet(np.ones(D))
    return TransferModel(q, M, REP_OF[kind])


def make_spec(kind, n, tau=0.0):
    return LossSpec(kind, tau, tikhonov(n, 1) if tau > 0 else None, 100 if kind == "poisson_run" else None)


def fd_gradient(spec, l, tm, h=1e-6):
    g = np.zeros_like(l)
    for i in range(l.size):
        e = np.zeros_like(l)
        e[i] = h
        g[i] = (evaluate_loss(spec, softmax(l + e), tm) - evaluate_loss(spec, softmax(l - e), tm)) / (2 * h)
    return g


def simplex_grid(step=0.001):
    k = int(round(1 / step))
    i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
    keep = i + j <= k
    a, b = i[keep] / k, j[keep] / k
    return np.column_stack((a, b, 1 - a - b))
