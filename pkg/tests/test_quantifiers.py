import copy

import numpy as np
import pytest

from ordq.classifier import cross_val_proba, predict_proba, train
from ordq.exceptions import DimensionError, UnknownMethod
from ordq.protocols import synth_ordinal
from ordq.quantifiers import (
    METHODS,
    MethodSpec,
    default_grid,
    dumps,
    fit,
    loads,
    quantify,
)
from ordq.simplex import jaggedness, tikhonov
from ordq.solvers import LossSpec, minimize
from ordq.transfer import TransferModel

N_CLASSES = 5


@pytest.fixture(scope="module")
def data():
    X, y = synth_ordinal(N_CLASSES, 3, 800, 0.8, seed=1)
    clf = train(X, y, N_CLASSES)
    cv = cross_val_proba(X, y, N_CLASSES, 5, seed=0)
    Xs, _ = synth_ordinal(N_CLASSES, 3, 300, 0.8, class_prevalence=[0.4, 0.3, 0.15, 0.1, 0.05], seed=2)
    return X, y, clf, cv, Xs


def fitted(name, data, **hyper):
    X, y, clf, cv, _ = data
    return fit(MethodSpec(name, hyper), X, y, N_CLASSES, cv_folds=5, classifier=clf, cv_proba=cv)


def test_default_grid_sizes():
    assert default_grid("CC") == [{}]
    assert len(default_grid("o-HDx")) == 9
    assert len(default_grid("IBU")) == 4
    assert len(default_grid("o-SLD")) == 4
    assert default_grid("RUN") == [{"tau": 1e-3}, {"tau": 1e-1}, {"tau": 1e1}]
    assert len(default_grid("o-PDF")) == 6
    assert default_grid("o-EDy") == [{"tau": t} for t in (1e-5, 1e-3, 1e-1)]
    assert {g["bins"] for g in default_grid("HDy")} == {2, 4}
    with pytest.raises(UnknownMethod):
        default_grid("QuaNet")


def test_method_spec_validation():
    with pytest.raises(ValueError):
        MethodSpec("PACC", {"tau": 0.1})
    with pytest.raises(UnknownMethod):
        MethodSpec("XYZ")
    with pytest.raises(ValueError):
        MethodSpec("PACC", classifier={"depth": 3})
    for name in METHODS:
        for h in default_grid(name):
            MethodSpec(name, h)


@pytest.mark.parametrize("name", METHODS)
def test_every_method_returns_distribution(name, data):
    fq = fitted(name, data)
    before = dumps(fq)
    p = quantify(fq, data[4])
    assert p.shape == (N_CLASSES,)
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0, abs=1e-9)
    assert dumps(fq) == before  # quantify leaves the fitted model untouched


@pytest.mark.parametrize("name", ["PACC", "HDx", "EDy", "IBU", "o-HDy"])
def test_serialisation_round_trip(name, data):
    fq = fitted(name, data)
    fq2 = loads(dumps(fq))
    assert dumps(fq2) == dumps(fq)
    np.testing.assert_array_equal(quantify(fq2, data[4]), quantify(fq, data[4]))


def test_fit_deterministic():
    X, y = synth_ordinal(4, 2, 200, 1.0, seed=3)
    a = fit(MethodSpec("o-PACC"), X, y, 4, cv_folds=4, seed=7)
    b = fit(MethodSpec("o-PACC"), X, y, 4, cv_folds=4, seed=7)
    assert dumps(a) == dumps(b)


def test_acc_separable_gives_identity():
    rng = np.random.default_rng(0)
    X = np.vstack([c * 10 + rng.normal(0, 0.3, (40, 2)) for c in range(3)])
    y = np.repeat(np.arange(3), 40)
    fq = fit(MethodSpec("ACC"), X, y, 3, cv_folds=5)
    np.testing.assert_allclose(fq.transfer.M, np.eye(3), atol=1e-12)
    cc = fit(MethodSpec("CC"), X, y, 3, cv_folds=5)
    np.testing.assert_array_equal(cc.transfer.M, np.eye(3))


def test_cc_pcc_return_q(data):
    X, y, clf, cv, Xs = data
    P = predict_proba(clf, Xs)
    np.testing.assert_allclose(quantify(fitted("PCC", data), Xs), P.mean(axis=0))
    counts = np.bincount(P.argmax(axis=1), minlength=N_CLASSES) / len(Xs)
    np.testing.assert_allclose(quantify(fitted("CC", data), Xs), counts)


def test_dimension_error(data):
    with pytest.raises(DimensionError):
        quantify(fitted("PACC", data), np.zeros((5, 4)))


def test_precomputed_posteriors_match(data):
    X, y, clf, cv, Xs = data
    fq = fitted("o-EDy", data)
    np.testing.assert_array_equal(quantify(fq, Xs), quantify(fq, Xs, proba=predict_proba(clf, Xs)))


@pytest.mark.parametrize(
    "base, ordinal, zero",
    [
        ("ACC", "o-ACC", {"tau": 0.0}),
        ("PACC", "o-PACC", {"tau": 0.0}),
        ("HDx", "o-HDx", {"tau": 0.0}),
        ("HDy", "o-HDy", {"tau": 0.0}),
        ("EDy", "o-EDy", {"tau": 0.0}),
        ("SLD", "o-SLD", {"interp_factor": 0.0}),
    ],
)
def test_zero_regularisation_degenerates(base, ordinal, zero, data):
    Xs = data[4]
    a = quantify(fitted(base, data), Xs)
    b = quantify(fitted(ordinal, data, **zero), Xs)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_regularisation_reduces_jaggedness(data):
    Xs = data[4]
    xi = [jaggedness(quantify(fitted("o-PACC", data, tau=t), Xs), 1) for t in (0.0, 1e-3, 1e-1, 1e1)]
    assert all(b <= a + 1e-9 for a, b in zip(xi, xi[1:]))


def test_jaggedness_monotone_in_tau_n3():
    # penalised least squares on n = 3: xi1 of the optimum never grows with tau
    rng = np.random.default_rng(0)
    C = tikhonov(3, 1)
    for _ in range(10):
        M = rng.dirichlet(np.ones(5), size=3).T
        tm = TransferModel(rng.dirichlet(np.ones(5)), M, "soft")
        xi = []
        for tau in (0.0, 1e-5, 1e-3, 1e-1, 1e1):
            p = minimize(LossSpec("least_squares", tau, C if tau > 0 else None), tm).estimate
            xi.append(jaggedness(p, 1))
        assert all(b <= a + 1e-7 for a, b in zip(xi, xi[1:]))


def test_fitted_quantifier_is_frozen(data):
    fq = fitted("PACC", data)
    with pytest.raises(Exception):
        fq.n = 3
    clone = copy.deepcopy(fq)
    assert dumps(clone) == dumps(fq)
