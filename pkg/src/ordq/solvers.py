"""Losses over (q, M), the softmax-parameterised minimiser, and EM-style solvers.

Losses are written as functions of a prevalence vector ``p`` and vectorise
over leading axes, so a whole grid of candidates can be scored at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, ZeroPrior
from .simplex import latent_of, softmax
from .transfer import TransferModel

LOSS_KINDS = ("least_squares", "hellinger", "poisson_run", "energy", "cdf_l2", "cdf_l1")
SMOOTH_KINDS = LOSS_KINDS[:-1]
RATE_FLOOR = 1e-12


@dataclass(frozen=True)
class LossSpec:
    kind: str
    tau: float = 0.0
    C: np.ndarray | None = None
    sample_size: int | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.tau > 0 and self.C is None:
            raise ValueError("tau > 0 requires a Tikhonov matrix C")
        if self.kind == "poisson_run" and not self.sample_size:
            raise ValueError("poisson_run needs a positive sample_size")


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 10000
    grad_tol: float = 1e-8
    init: object = "uniform"  # "uniform" or a warm-start distribution
    restarts: int = 0
    seed: int = 0
    ftol: float = 1e-10  # stall threshold, see _descend

    def __post_init__(self):
        if self.max_iter < 1 or self.grad_tol <= 0:
            raise ValueError("need max_iter >= 1 and grad_tol > 0")
        if self.ftol < 0:
            raise ValueError("ftol must be non-negative")


@dataclass(frozen=True)
class SmoothingConfig:
    poly_order: int = 1
    interp_factor: float = 0.0

    def __post_init__(self):
        if self.poly_order not in (0, 1):
            raise ValueError("poly_order must be 0 or 1")
        if not 0.0 <= self.interp_factor <= 1.0:
            raise ValueError("interp_factor must lie in [0, 1]")


@dataclass
class SolveResult:
    estimate: np.ndarray
    loss_value: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


# --- losses ------------------------------------------------------------------------


def _check_dims(spec: LossSpec, p, tm: TransferModel):
    n = np.shape(p)[-1]
    if tm.M.shape[1] != n:
        raise DimensionError(f"M has {tm.M.shape[1]} columns, p has length {n}")
    if spec.C is not None and spec.C.shape[1] != n:
        raise DimensionError(f"C has {spec.C.shape[1]} columns, p has length {n}")
    if spec.kind == "energy" and tm.M.shape[0] != n:
        raise DimensionError("energy loss needs a square M")


def _base_value_and_grad(spec: LossSpec, p, tm: TransferModel, want_grad: bool, mu: float = 0.0):
    """Base loss (without regulariser) and its gradient with respect to ``p``."""
    q, M = tm.q, tm.M
    Mp = p @ M.T
    kind = spec.kind
    g = None
    if kind == "least_squares":
        r = Mp - q
        val = np.sum(r * r, axis=-1)
        if want_grad:
            g = 2 * r @ M
    elif kind == "hellinger":
        b = tm.metadata["bins"]
        Mp = np.maximum(Mp, 0.0)
        sq_a = np.sqrt(q).reshape(-1, b)
        sq_b = np.sqrt(Mp).reshape(Mp.shape[:-1] + (-1, b))
        ss = np.sum((sq_a - sq_b) ** 2, axis=-1)
        if mu > 0:
            # each per-block distance has a norm-like kink at zero; smooth it like cdf_l1
            root = np.sqrt(ss + mu * mu)
            val = (root - mu).mean(axis=-1)
        else:
            root = np.sqrt(ss)
            val = root.mean(axis=-1)
        if want_grad:
            # d/db (sqrt(a) - sqrt(b))^2 = 1 - sqrt(a)/sqrt(b); rows with b == 0 have zero M rows
            with np.errstate(divide="ignore", invalid="ignore"):
                inner = np.where(sq_b > 0, 1.0 - sq_a / sq_b, 0.0)
                scale = np.where(root > 1e-15, 1.0 / (2 * root), 0.0)
            dvec = (inner * scale[..., None]).reshape(Mp.shape) / root.shape[-1]
            g = dvec @ M
    elif kind == "poisson_run":
        n_items = spec.sample_size
        lam = np.maximum(n_items * Mp, RATE_FLOOR)
        qbar = n_items * q
        val = np.sum(lam - qbar * np.log(lam), axis=-1)
        if want_grad:
            g = n_items * ((1.0 - qbar / lam) @ M)
    elif kind == "energy":
        val = 2 * (p @ q) - np.sum(p * Mp, axis=-1)
        if want_grad:
            g = 2 * q - p @ (M + M.T)
    else:
        c = (np.cumsum(Mp, axis=-1) - np.cumsum(q))[..., :-1]
        if kind == "cdf_l2":
            val = np.sum(c * c, axis=-1)
            dc = 2 * c
        elif mu > 0:
            # pseudo-Huber smoothing of |c|, used only by the cdf_l1 refinement stage
            root = np.sqrt(c * c + mu * mu)
            val = np.sum(root - mu, axis=-1)
            dc = c / root
        else:
            val = np.sum(np.abs(c), axis=-1)
            dc = np.sign(c)
        if want_grad:
            # d c_k / d (Mp)_j = 1 for j <= k: reverse cumulative sum maps dc back
            dmp = np.zeros(Mp.shape)
            dmp[..., :-1] = np.cumsum(dc[..., ::-1], axis=-1)[..., ::-1]
            g = dmp @ M
    return val, g


def evaluate_loss(spec: LossSpec, p, tm: TransferModel):
    """Loss value at ``p`` (or at each row of a 2-D ``p``), regulariser included."""
    p = np.asarray(p, dtype=float)
    _check_dims(spec, p, tm)
    val, _ = _base_value_and_grad(spec, p, tm, want_grad=False)
    if spec.tau > 0:
        r = p @ spec.C.T
        val = val + 0.5 * spec.tau * np.sum(r * r, axis=-1)
    return val


def _value_and_grad_l(spec: LossSpec, l, tm: TransferModel, mu: float = 0.0):
    p = softmax(l)
    val, gp = _base_value_and_grad(spec, p, tm, want_grad=True, mu=mu)
    if spec.tau > 0:
        r = spec.C @ p
        val = val + 0.5 * spec.tau * float(r @ r)
        gp = gp + spec.tau * (spec.C.T @ r)
    # softmax Jacobian J = diag(p) - p p^T is symmetric
    gl = p * (gp - p @ gp)
    return float(val), gl


def gradient(spec: LossSpec, l, tm: TransferModel) -> np.ndarray:
    """Gradient of ``loss(softmax(l))`` with respect to the latent vector ``l``.

    For ``cdf_l1`` this is a subgradient with ``sign(0) = 0``.
    """
    l = np.asarray(l, dtype=float)
    _check_dims(spec, l, tm)
    return _value_and_grad_l(spec, l, tm)[1]


# --- softmax-parameterised minimisation ----------------------------------------------


NONMONOTONE_MEMORY = 10
STALL_WINDOW = 50
SMOOTHING_SCHEDULE = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)


def _descend(fg, l0, max_iter, grad_tol, ftol=0.0):
    """Gradient descent with backtracking; component 0 stays pinned at 0.

    Trial steps use the Barzilai-Borwein length and are halved until the
    Armijo condition holds against the largest of the last
    ``NONMONOTONE_MEMORY`` accepted losses (Grippo-Lampariello-Lucidi).
    The returned point is the best one visited.

    Besides the gradient test, descent stops early (unconverged) once the best
    loss improved by at most ``ftol * max(1, |f|)`` over ``STALL_WINDOW``
    iterations while the current iterate sits at that best loss. This matters
    for optima on the simplex boundary, which the latent parameterization only
    reaches asymptotically.
    """
    l = np.array(l0, dtype=float)
    l[0] = 0.0
    f, g = fg(l)
    g[0] = 0.0
    best_l, best_f = l, f
    best_trace = [f]
    recent = [f]
    # a unit-length first move; larger jumps can land where softmax saturates and the gradient vanishes
    step = 1.0 / max(1.0, math.sqrt(float(g @ g)))
    l_prev = g_prev = None
    it = 0
    for it in range(1, max_iter + 1):
        gnorm2 = float(g @ g)
        if math.sqrt(gnorm2) <= grad_tol:
            return l, f, it - 1, True
        if l_prev is not None:
            s, y = l - l_prev, g - g_prev
            sy = float(s @ y)
            step = float(s @ s) / sy if sy > 0 else 1.0 / math.sqrt(gnorm2)
        step = min(max(step, 1e-10), 1e10)
        ref = max(recent[-NONMONOTONE_MEMORY:])
        while True:
            l_new = l - step * g
            f_new, g_new = fg(l_new)
            if f_new <= ref - 1e-4 * step * gnorm2:
                break
            step *= 0.5
            if step < 1e-20:
                return best_l, best_f, it, False
        g_new[0] = 0.0
        l_prev, g_prev = l, g
        l, f, g = l_new, f_new, g_new
        recent.append(f)
        if f < best_f:
            best_l, best_f = l, f
        best_trace.append(best_f)
        if ftol > 0 and len(best_trace) > STALL_WINDOW:
            thr = ftol * max(1.0, abs(best_f))
            # iterates wandering above the best point are still exploring, not stalled
            if best_trace[-STALL_WINDOW - 1] - best_f <= thr and f - best_f <= thr:
                return best_l, best_f, it, False
    converged = math.sqrt(float(g @ g)) <= grad_tol
    return (l, f, it, True) if converged else (best_l, best_f, it, False)


def _subgradient(fg, l0, max_iter, step0=1.0):
    """Normalised subgradient steps of length ``step0 / sqrt(k)``; keeps the best iterate."""
    l = np.array(l0, dtype=float)
    l[0] = 0.0
    best_l, best_f = l.copy(), fg(l)[0]
    for k in range(1, max_iter + 1):
        f, g = fg(l)
        g[0] = 0.0
        gn = math.sqrt(float(g @ g))
        if f < best_f:
            best_l, best_f = l.copy(), f
        if gn == 0:
            break
        l = l - (step0 / math.sqrt(k)) * g / gn
    f = fg(l)[0]
    if f < best_f:
        best_l, best_f = l.copy(), f
    return best_l, best_f


def _minimize_from(spec, tm, l0, cfg):
    exact = lambda x: _value_and_grad_l(spec, x, tm)
    if spec.kind not in ("cdf_l1", "hellinger"):
        return _descend(exact, l0, cfg.max_iter, cfg.grad_tol, cfg.ftol)
    # Match distance is piecewise linear and each Hellinger block distance has a
    # norm-like kink at zero. Descend on pseudo-Huber smoothings with shrinking
    # width, warm-starting each from the last; the best exact-loss point wins.
    budget = max(1, cfg.max_iter // 10)
    l = np.array(l0, dtype=float)
    l[0] = 0.0
    f = exact(l)[0]
    its = 0
    if spec.kind == "cdf_l1":
        l, f = _subgradient(exact, l, budget)
        its = budget
    for mu in SMOOTHING_SCHEDULE:
        smooth = lambda x, mu=mu: _value_and_grad_l(spec, x, tm, mu=mu)
        l_s, _, it, _ = _descend(smooth, l, budget, cfg.grad_tol, cfg.ftol)
        its += it
        f_s = exact(l_s)[0]
        if f_s <= f:
            l, f = l_s, f_s
    g = exact(l)[1]
    g[0] = 0.0
    return l, f, its, bool(math.sqrt(float(g @ g)) <= cfg.grad_tol)


KKT_TOL = 1e-4
MAX_ESCAPES = 3
SATURATED = 1e-3


def _kkt_violation(spec, p, tm) -> float:
    """How much moving mass onto a collapsed class would still lower the loss.

    At a minimiser on the simplex every ``dL/dp_i`` is at least ``p . dL/dp``.
    The latent gradient of class ``i`` carries a factor ``p_i``, so descent can
    stall on classes whose weight has collapsed below ``SATURATED`` even when
    the loss wants them back; only those classes are checked. Positive classes
    are left out because kinked losses (Hellinger blocks that fit exactly)
    break the equality there at genuine minima. Scaled by the gradient magnitude.
    """
    low = p < SATURATED
    if not low.any():
        return 0.0
    _, gp = _base_value_and_grad(spec, p, tm, want_grad=True)
    if spec.tau > 0:
        gp = gp + spec.tau * (spec.C.T @ (spec.C @ p))
    return float(p @ gp - gp[low].min()) / max(1.0, float(np.abs(gp).max()))


def minimize(spec: LossSpec, tm: TransferModel, cfg: SolverConfig | None = None) -> SolveResult:
    """Minimise ``loss(softmax(l))`` over latent vectors with ``l[0] = 0``.

    Starts from ``cfg.init`` and from ``cfg.restarts`` standard-normal latent
    points; the lowest final loss wins (earliest start on ties). A run that
    ends at a saturated point violating the simplex optimality conditions is
    continued from its estimate mixed 10% towards uniform (smooth losses only).
    """
    cfg = cfg or SolverConfig()
    n = tm.n
    if n < 3:
        raise DimensionError("minimize needs n >= 3 classes")
    _check_dims(spec, np.zeros(n), tm)
    if isinstance(cfg.init, str):
        if cfg.init != "uniform":
            raise ValueError(f"unknown init {cfg.init!r}")
        starts = [np.zeros(n)]
    else:
        starts = [latent_of(np.maximum(np.asarray(cfg.init, dtype=float), 1e-300))]
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.restarts):
        starts.append(rng.standard_normal(n))

    best = None
    for l0 in starts:
        l, f, it, conv = _minimize_from(spec, tm, l0, cfg)
        for _ in range(MAX_ESCAPES if spec.kind in SMOOTH_KINDS else 0):
            p = softmax(l)
            if _kkt_violation(spec, p, tm) <= KKT_TOL:
                break
            l2, f2, it2, conv2 = _minimize_from(spec, tm, latent_of(0.9 * p + 0.1 / n), cfg)
            it += it2
            if f2 >= f:
                break
            l, f, conv = l2, f2, conv2
        if best is None or f < best[1]:
            best = (l, f, it, conv)
    l, f, it, conv = best
    return SolveResult(softmax(l), float(f), it, conv)


# --- EM-style solvers ----------------------------------------------------------------


def polyfit_smooth(p, order: int) -> np.ndarray:
    """Least-squares polynomial fit of ``p`` against class positions 1..n, clipped and renormalised."""
    p = np.asarray(p, dtype=float)
    x = np.arange(1, p.size + 1, dtype=float)
    fit = np.polyval(np.polyfit(x, p, order), x)
    fit = np.maximum(fit, 0.0)
    return fit / fit.sum()


def _smoothed_prior(p, smoothing: SmoothingConfig | None):
    if smoothing is None or smoothing.interp_factor == 0:
        return p
    a = smoothing.interp_factor
    prior = np.maximum((1 - a) * p + a * polyfit_smooth(p, smoothing.poly_order), 0.0)
    return prior / prior.sum()


def sld(
    proba_sample,
    train_prevalence,
    smoothing: SmoothingConfig | None = None,
    max_iter: int = 1000,
    tol: float = 1e-6,
    callback=None,
) -> SolveResult:
    """Expectation-maximisation prior adjustment of classifier posteriors.

    With ``smoothing`` the prior fed into each next iteration is interpolated
    towards a low-order polynomial fit of the current estimate. Stops when the
    L1 change between consecutive estimates drops below ``tol``. The reported
    loss is the mean negative log-likelihood of the sample.
    """
    S = np.asarray(proba_sample, dtype=float)
    p0 = np.asarray(train_prevalence, dtype=float)
    if S.ndim != 2 or S.shape[1] != p0.size:
        raise DimensionError(f"posteriors {S.shape} do not match prior of length {p0.size}")
    if np.any(p0 <= 0):
        raise ZeroPrior("training prevalence must be strictly positive")

    prior = p_prev = p0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        post = S * (prior / p0)
        den = post.sum(axis=1, keepdims=True)
        post = np.divide(post, den, out=np.zeros_like(post), where=den > 0)
        p_new = post.mean(axis=0)
        p_new = p_new / p_new.sum()
        if callback is not None:
            callback(p_new)
        change = float(np.abs(p_new - p_prev).sum())
        p_prev = p_new
        if change < tol:
            converged = True
            break
        prior = _smoothed_prior(p_new, smoothing)

    mix = S @ (p_prev / p0)
    nll = float(-np.mean(np.log(np.maximum(mix, 1e-300))))
    return SolveResult(p_prev, nll, it, converged)


def ibu(
    tm: TransferModel,
    prior,
    smoothing: SmoothingConfig | None = None,
    max_iter: int = 1000,
    tol: float = 1e-6,
    callback=None,
) -> SolveResult:
    """Iterative Bayesian unfolding on a column-normalised transfer model.

    Each iteration applies Bayes' theorem with the current prior,
    ``p_i <- sum_j q_j * M_ji p_i / sum_l M_jl p_l``, with the same
    smoothing between iterations as :func:`sld`. The reported loss is the
    cross-entropy ``-sum_j q_j log (M p)_j``.
    """
    q, M = tm.q, tm.M
    p0 = np.asarray(prior, dtype=float)
    if p0.size != M.shape[1]:
        raise DimensionError(f"prior of length {p0.size} vs M with {M.shape[1]} columns")
    if np.any(p0 <= 0):
        raise ZeroPrior("prior must be strictly positive")

    cur = p_prev = p0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        joint = M * cur[None, :]
        den = joint.sum(axis=1)
        rows = den > 0
        p_new = (joint[rows] / den[rows, None] * q[rows, None]).sum(axis=0)
        total = p_new.sum()
        if total <= 0:
            p_new = p_prev
        else:
            p_new = p_new / total
        if callback is not None:
            callback(p_new)
        change = float(np.abs(p_new - p_prev).sum())
        p_prev = p_new
        if change < tol:
            converged = True
            break
        cur = _smoothed_prior(p_new, smoothing)

    Mp = M @ p_prev
    mask = q > 0
    loss = float(-np.sum(q[mask] * np.log(np.maximum(Mp[mask], 1e-300))))
    return SolveResult(p_prev, loss, it, converged)
