import math
import zlib

import numpy as np
import pytest

from ordq.exceptions import DimensionError, ZeroPrior
from ordq.simplex import jaggedness, softmax, tikhonov
from ordq.solvers import (
    SMOOTH_KINDS,
    LossSpec,
    SmoothingConfig,
    SolverConfig,
    evaluate_loss,
    gradient,
    ibu,
    minimize,
    polyfit_smooth,
    sld,
)
from ordq.transfer import TransferModel

from helpers import fd_gradient, make_spec, random_model, simplex_grid


# --- losses --------------------------------------------------------------------------


def test_least_squares_exact():
    M = np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.2], [0.1, 0.1, 0.7]])
    p = np.array([0.2, 0.5, 0.3])
    tm = TransferModel(M @ p, M, "soft")
    assert evaluate_loss(LossSpec("least_squares"), p, tm) == pytest.approx(0.0, abs=1e-15)


def test_hellinger_identical_is_zero():
    rng = np.random.default_rng(0)
    tm = random_model("hellinger", 3, rng)
    p = np.array([0.3, 0.3, 0.4])
    tm = tm.with_q(tm.M @ p)
    assert evaluate_loss(LossSpec("hellinger"), p, tm) == pytest.approx(0.0, abs=1e-12)


def test_hellinger_hand_value():
    # two blocks of two bins; block distances sqrt(sum (sqrt a - sqrt b)^2), averaged
    M = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.5, 0.5]])
    tm = TransferModel([0.25, 0.75, 0.5, 0.5], M, "posterior_hist", {"bins": 2})
    p = np.array([1.0, 0.0])
    d1 = math.sqrt((math.sqrt(0.25) - 1) ** 2 + (math.sqrt(0.75) - 0) ** 2)
    assert evaluate_loss(LossSpec("hellinger"), p, tm) == pytest.approx(d1 / 2, abs=1e-12)


def test_poisson_run_bruteforce():
    q = [0.5, 0.3, 0.2]
    tm = TransferModel(q, np.eye(3), "hard")
    spec = LossSpec("poisson_run", sample_size=10)
    expected = 0.0
    for j in range(3):
        rate = 10 * q[j]
        expected += rate - 10 * q[j] * math.log(rate)
    assert evaluate_loss(spec, q, tm) == pytest.approx(expected, abs=1e-12)


def test_poisson_rate_floor():
    tm = TransferModel([0.5, 0.5, 0.0], np.eye(3), "hard")
    spec = LossSpec("poisson_run", sample_size=10)
    # rates (10, 0, 0) become (10, 1e-12, 1e-12); the observed count 5 on class 1 meets the floor
    expected = 10 + 2e-12 - 5 * math.log(10) - 5 * math.log(1e-12)
    assert evaluate_loss(spec, [1.0, 0.0, 0.0], tm) == pytest.approx(expected, rel=1e-12)


def test_cdf_losses_hand_values():
    tm = TransferModel([0.2, 0.3, 0.5], np.eye(3), "ranking_hist")
    p = np.array([0.5, 0.2, 0.3])
    # cumulative residuals (0.3, 0.2)
    assert evaluate_loss(LossSpec("cdf_l1"), p, tm) == pytest.approx(0.5)
    assert evaluate_loss(LossSpec("cdf_l2"), p, tm) == pytest.approx(0.13)


def test_energy_hand_value():
    M = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]])
    q = np.array([0.5, 0.6, 0.9])
    p = np.array([0.2, 0.3, 0.5])
    expected = 2 * sum(p[i] * q[i] for i in range(3)) - sum(p[i] * M[i, j] * p[j] for i in range(3) for j in range(3))
    assert evaluate_loss(LossSpec("energy"), p, TransferModel(q, M, "energy")) == pytest.approx(expected)


def test_regulariser_term():
    C = tikhonov(5, 1)
    tm = TransferModel(np.zeros(5), np.zeros((5, 5)), "soft")
    p = np.array([0.02, 0.47, 0.02, 0.47, 0.02])
    assert evaluate_loss(LossSpec("least_squares", 2.0, C), p, tm) == pytest.approx(1.215 * 2.0)


def test_dimension_errors():
    tm = TransferModel(np.full(3, 1 / 3), np.eye(3), "soft")
    with pytest.raises(DimensionError):
        evaluate_loss(LossSpec("least_squares"), [0.5, 0.5], tm)
    with pytest.raises(DimensionError):
        evaluate_loss(LossSpec("least_squares", 1.0, tikhonov(4, 1)), [0.2, 0.3, 0.5], tm)
    with pytest.raises(ValueError):
        LossSpec("least_squares", 1.0)


@pytest.mark.parametrize("kind", SMOOTH_KINDS)
@pytest.mark.parametrize("tau", [0.0, 0.5])
def test_gradient_finite_differences(kind, tau):
    rng = np.random.default_rng([zlib.crc32(kind.encode()), int(tau * 10)])
    worst = 0.0
    for _ in range(30):
        n = int(rng.integers(3, 7))
        tm = random_model(kind, n, rng)
        spec = make_spec(kind, n, tau)
        l = rng.normal(0, 1, n)
        l[0] = 0.0
        g = gradient(spec, l, tm)
        fd = fd_gradient(spec, l, tm)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-8))
    assert worst < 1e-5


def test_gradient_regulariser_only():
    n = 5
    C = tikhonov(n, 1)
    tm = TransferModel(np.zeros(n), np.zeros((n, n)), "soft")
    l = np.array([0.0, 0.4, -0.3, 1.1, 0.2])
    p = softmax(l)
    J = np.diag(p) - np.outer(p, p)
    expected = 3.0 * J.T @ C.T @ C @ p
    np.testing.assert_allclose(gradient(LossSpec("least_squares", 3.0, C), l, tm), expected, atol=1e-14)


def test_cdf_l1_subgradient_sign_zero():
    # softmax(0) reproduces q bit for bit, so every cumulative residual is exactly 0
    tm = TransferModel(np.full(3, 1 / 3), np.eye(3), "ranking_hist")
    l = np.zeros(3)
    np.testing.assert_allclose(gradient(LossSpec("cdf_l1"), l, tm), 0.0, atol=1e-15)


# --- minimize --------------------------------------------------------------------------


def test_minimize_identity_recovers_q():
    tm = TransferModel([0.2, 0.3, 0.5], np.eye(3), "soft")
    res = minimize(LossSpec("least_squares"), tm)
    np.testing.assert_allclose(res.estimate, [0.2, 0.3, 0.5], atol=1e-6)
    assert res.converged


def test_minimize_gradient_small_at_interior_optimum():
    tm = TransferModel([0.2, 0.3, 0.5], np.eye(3), "soft")
    res = minimize(LossSpec("least_squares"), tm)
    l = np.log(res.estimate) - math.log(res.estimate[0])
    assert np.linalg.norm(gradient(LossSpec("least_squares"), l, tm)) < 1e-8


@pytest.mark.parametrize("kind", ["least_squares", "hellinger", "poisson_run", "energy", "cdf_l2", "cdf_l1"])
def test_minimize_beats_grid(kind):
    grid = simplex_grid()
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    for _ in range(3):
        tm = random_model(kind, 3, rng)
        spec = make_spec(kind, 3)
        res = minimize(spec, tm)
        assert res.loss_value <= evaluate_loss(spec, grid, tm).min() + 1e-4
        assert res.loss_value == pytest.approx(evaluate_loss(spec, res.estimate, tm), abs=1e-12)


def test_large_tau_gives_linear_shape():
    rng = np.random.default_rng(3)
    tm = random_model("least_squares", 6, rng)
    res = minimize(make_spec("least_squares", 6, 1e6), tm)
    assert jaggedness(res.estimate, 1) < 1e-4


def test_tau_continuity_at_zero():
    rng = np.random.default_rng(5)
    for kind in SMOOTH_KINDS:
        tm = random_model(kind, 5, rng)
        a = minimize(make_spec(kind, 5), tm).estimate
        b = minimize(make_spec(kind, 5, 1e-300), tm).estimate
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_minimize_deterministic_with_restarts():
    rng = np.random.default_rng(9)
    tm = random_model("energy", 5, rng)
    cfg = SolverConfig(restarts=3, seed=4)
    a = minimize(make_spec("energy", 5), tm, cfg)
    b = minimize(make_spec("energy", 5), tm, cfg)
    np.testing.assert_array_equal(a.estimate, b.estimate)
    single = minimize(make_spec("energy", 5), tm)
    assert a.loss_value <= single.loss_value + 1e-15


def test_minimize_warm_start_and_errors():
    tm = TransferModel([0.2, 0.3, 0.5], np.eye(3), "soft")
    res = minimize(LossSpec("least_squares"), tm, SolverConfig(init=[0.2, 0.3, 0.5]))
    np.testing.assert_allclose(res.estimate, [0.2, 0.3, 0.5], atol=1e-9)
    with pytest.raises(DimensionError):
        minimize(LossSpec("least_squares"), TransferModel([0.5, 0.5], np.eye(2), "soft"))
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)


def test_minimize_iteration_exhaustion():
    rng = np.random.default_rng(2)
    tm = random_model("least_squares", 6, rng)
    res = minimize(make_spec("least_squares", 6), tm, SolverConfig(max_iter=1, ftol=0.0))
    assert not res.converged
    assert np.isclose(res.estimate.sum(), 1.0)


# --- EM solvers --------------------------------------------------------------------------


S3 = np.array([[0.7, 0.2, 0.1], [0.2, 0.5, 0.3], [0.1, 0.3, 0.6], [0.6, 0.3, 0.1]])
PRIOR3 = np.array([0.5, 0.3, 0.2])


def sld_by_hand(S, p0, iterations):
    p = list(p0)
    for _ in range(iterations):
        new = [0.0, 0.0, 0.0]
        for row in S:
            w = [row[i] * p[i] / p0[i] for i in range(3)]
            z = sum(w)
            for i in range(3):
                new[i] += w[i] / z / len(S)
        p = new
    return np.array(p)


def test_sld_two_iterations_by_hand():
    res = sld(S3, PRIOR3, max_iter=2, tol=0.0)
    assert res.iterations == 2
    np.testing.assert_allclose(res.estimate, sld_by_hand(S3, PRIOR3, 2), atol=1e-15)


def test_sld_fixed_point_when_consistent():
    S = np.eye(3)[[0, 0, 1, 2, 2]]
    p0 = np.array([0.4, 0.2, 0.4])
    res = sld(S, p0)
    np.testing.assert_allclose(res.estimate, p0)
    assert res.iterations == 1 and res.converged


def test_sld_converged_is_fixed_point():
    rng = np.random.default_rng(0)
    S = rng.dirichlet(np.ones(4), size=200)
    p0 = np.full(4, 0.25)
    res = sld(S, p0, tol=1e-10, max_iter=100000)
    assert res.converged
    np.testing.assert_allclose(sld_step(S, p0, res.estimate), res.estimate, atol=1e-9)


def sld_step(S, p0, p):
    post = S * (p / p0)
    post /= post.sum(axis=1, keepdims=True)
    return post.mean(axis=0)


def test_sld_iterates_on_simplex():
    rng = np.random.default_rng(1)
    for _ in range(20):
        S = rng.dirichlet(np.full(5, 0.3), size=50)
        p0 = rng.dirichlet(np.ones(5)) + 1e-3
        p0 /= p0.sum()
        seen = []
        sld(S, p0, SmoothingConfig(1, 0.5), callback=seen.append)
        for p in seen:
            assert np.all(p >= 0) and p.sum() == pytest.approx(1.0, abs=1e-12)


def test_sld_errors():
    with pytest.raises(ZeroPrior):
        sld(S3, [0.5, 0.5, 0.0])
    with pytest.raises(DimensionError):
        sld(S3, [0.5, 0.5])


def test_ibu_identity_one_iteration():
    tm = TransferModel([0.1, 0.6, 0.3], np.eye(3), "hard")
    seen = []
    res = ibu(tm, np.full(3, 1 / 3), callback=seen.append)
    np.testing.assert_allclose(seen[0], [0.1, 0.6, 0.3], atol=1e-15)
    np.testing.assert_allclose(res.estimate, [0.1, 0.6, 0.3], atol=1e-15)


def test_ibu_two_iterations_by_hand():
    M = np.array([[0.7, 0.2, 0.1], [0.2, 0.6, 0.2], [0.1, 0.2, 0.7]])
    q = [0.5, 0.3, 0.2]
    p = [1 / 3, 1 / 3, 1 / 3]
    for _ in range(2):
        new = [0.0, 0.0, 0.0]
        for j in range(3):
            z = sum(M[j][l] * p[l] for l in range(3))
            for i in range(3):
                new[i] += q[j] * M[j][i] * p[i] / z
        p = new
    res = ibu(TransferModel(q, M, "hard"), np.full(3, 1 / 3), max_iter=2, tol=0.0)
    np.testing.assert_allclose(res.estimate, p, atol=1e-15)


def test_ibu_iterates_on_simplex():
    rng = np.random.default_rng(2)
    for _ in range(20):
        tm = random_model("poisson_run", 5, rng)
        seen = []
        ibu(tm, np.full(5, 0.2), SmoothingConfig(0, 0.3), max_iter=100, tol=0.0, callback=seen.append)
        assert len(seen) == 100
        for p in seen:
            assert np.all(p >= 0) and p.sum() == pytest.approx(1.0, abs=1e-12)


def test_ibu_zero_prior():
    with pytest.raises(ZeroPrior):
        ibu(TransferModel([0.5, 0.5, 0.0], np.eye(3), "hard"), [0.5, 0.5, 0.0])


def test_polyfit_smooth_examples():
    np.testing.assert_allclose(polyfit_smooth([0.5, 0.1, 0.4], 0), 1 / 3)
    lin = np.array([0.1, 0.15, 0.2, 0.25, 0.3])
    np.testing.assert_allclose(polyfit_smooth(lin, 1), lin, atol=1e-12)
    # x = 1, 2, 3; mean 1/3, slope -0.1 / 2
    np.testing.assert_allclose(polyfit_smooth([0.5, 0.1, 0.4], 1), [1 / 3 + 0.05, 1 / 3, 1 / 3 - 0.05], atol=1e-12)
    # the fitted line goes negative at the end and is clipped before renormalising
    out = polyfit_smooth([0.9, 0.1, 0.0, 0.0], 1)
    assert out[-1] == 0.0 and out.sum() == pytest.approx(1.0)


def test_smoothing_config_bounds():
    with pytest.raises(ValueError):
        SmoothingConfig(2, 0.1)
    with pytest.raises(ValueError):
        SmoothingConfig(1, 1.5)
