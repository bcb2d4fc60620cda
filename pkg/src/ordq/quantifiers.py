"""The named quantification methods, their fit/quantify lifecycle and grids."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import classifier as clf_mod
from . import transfer as tr
from .exceptions import DimensionError, UnknownMethod
from .simplex import tikhonov
from .solvers import LossSpec, SmoothingConfig, SolverConfig, ibu, minimize, sld

FORMAT_VERSION = 1

BASE_METHODS = ("CC", "PCC", "ACC", "PACC", "HDx", "HDy", "SLD", "IBU", "RUN", "EDy", "PDF")
ORDINAL_METHODS = ("o-ACC", "o-PACC", "o-HDx", "o-HDy", "o-SLD", "o-EDy", "o-PDF")
METHODS = BASE_METHODS + ORDINAL_METHODS

TAU_GRID = (1e-5, 1e-3, 1e-1)

# method -> (representation, legal hyperparameters with defaults)
_METHOD_TABLE = {
    "CC": ("hard", {}),
    "PCC": ("soft", {}),
    "ACC": ("hard", {}),
    "PACC": ("soft", {}),
    "HDx": ("feature_hist", {"bins": 3}),
    "HDy": ("posterior_hist", {"bins": 4}),
    "SLD": (None, {}),
    "IBU": ("hard", {"poly_order": 0, "interp_factor": 1e-2}),
    "RUN": ("hard", {"tau": 1e-1}),
    "EDy": ("energy", {"cap": None}),
    "PDF": ("ranking_hist", {"B": 10}),
    "o-ACC": ("hard", {"tau": 1e-3}),
    "o-PACC": ("soft", {"tau": 1e-3}),
    "o-HDx": ("feature_hist", {"bins": 3, "tau": 1e-3}),
    "o-HDy": ("posterior_hist", {"bins": 4, "tau": 1e-3}),
    "o-SLD": (None, {"poly_order": 1, "interp_factor": 1e-2}),
    "o-EDy": ("energy", {"cap": None, "tau": 1e-3}),
    "o-PDF": ("ranking_hist", {"B": 10, "tau": 1e-3}),
}

_LOSS_OF = {
    "ACC": "least_squares", "PACC": "least_squares",
    "o-ACC": "least_squares", "o-PACC": "least_squares",
    "HDx": "hellinger", "HDy": "hellinger", "o-HDx": "hellinger", "o-HDy": "hellinger",
    "RUN": "poisson_run",
    "EDy": "energy", "o-EDy": "energy",
    "PDF": "cdf_l1", "o-PDF": "cdf_l2",
}

CLASSIFIER_KEYS = ("l2_strength", "class_weighting", "max_epochs", "tol")


def _check_name(name: str):
    if name not in _METHOD_TABLE:
        raise UnknownMethod(f"unknown method {name!r}; choose from {', '.join(METHODS)}")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    hyperparams: dict = field(default_factory=dict)
    classifier: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_name(self.name)
        legal = _METHOD_TABLE[self.name][1]
        unknown = set(self.hyperparams) - set(legal)
        if unknown:
            raise ValueError(f"{self.name} does not accept hyperparameters {sorted(unknown)}")
        bad = set(self.classifier) - set(CLASSIFIER_KEYS)
        if bad:
            raise ValueError(f"unknown classifier hyperparameters {sorted(bad)}")

    def param(self, key):
        return self.hyperparams.get(key, _METHOD_TABLE[self.name][1][key])

    @property
    def representation(self):
        return _METHOD_TABLE[self.name][0]


def default_grid(name: str) -> list[dict]:
    """Hyperparameter assignments searched for ``name``, in declaration order."""
    _check_name(name)
    axes = {
        "CC": {}, "PCC": {}, "ACC": {}, "PACC": {}, "SLD": {},
        "HDx": {"bins": (2, 3, 4)},
        "HDy": {"bins": (2, 4)},
        "RUN": {"tau": (1e-3, 1e-1, 1e1)},
        "IBU": {"poly_order": (0, 1), "interp_factor": (1e-2, 1e-1)},
        "EDy": {},
        "PDF": {"B": (5, 10)},
    }
    base = name[2:] if name.startswith("o-") else name
    # o-SLD smooths its prior the way IBU does and shares IBU's grid
    grid = dict(axes["IBU" if name == "o-SLD" else base])
    if name.startswith("o-") and name != "o-SLD":
        grid["tau"] = TAU_GRID
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


@dataclass(frozen=True)
class FittedQuantifier:
    spec: MethodSpec
    classifier: clf_mod.SoftClassifier
    transfer: tr.TransferModel
    train_prevalence: np.ndarray
    n: int

    @property
    def d(self) -> int:
        return self.classifier.d


def fit(
    spec: MethodSpec,
    X,
    y,
    n_classes: int,
    cv_folds: int = 10,
    seed: int = 0,
    classifier: clf_mod.SoftClassifier | None = None,
    cv_proba=None,
) -> FittedQuantifier:
    """Train the classifier, estimate the transfer matrix out-of-fold, record priors.

    ``classifier`` and ``cv_proba`` may be supplied to share one trained
    classifier (and its cross-validated posteriors) across several methods.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if classifier is None:
        classifier = clf_mod.train(X, y, n_classes, **spec.classifier)
    rep = spec.representation
    needs_cv = rep in ("hard", "soft", "posterior_hist", "energy", "ranking_hist") and spec.name not in ("CC", "PCC")
    if needs_cv and cv_proba is None:
        cv_proba = clf_mod.cross_val_proba(X, y, n_classes, cv_folds, seed, **spec.classifier)

    if spec.name in ("CC", "PCC", "SLD", "o-SLD"):
        tm = tr.TransferModel(np.zeros(n_classes), np.eye(n_classes), rep or "soft")
    elif rep == "hard":
        M = tr.class_means(tr.embed_hard(np.argmax(cv_proba, axis=1), n_classes), y, n_classes)
        tm = tr.TransferModel(np.zeros(n_classes), M, "hard")
    elif rep == "soft":
        tm = tr.soft_means(cv_proba[:1], cv_proba, y)
    elif rep == "feature_hist":
        tm = tr.feature_histograms(X[:1], X, y, n_classes, spec.param("bins"))
    elif rep == "posterior_hist":
        tm = tr.posterior_histograms(cv_proba[:1], cv_proba, y, spec.param("bins"))
    elif rep == "energy":
        tm = tr.energy_features(cv_proba[:1], cv_proba, y, spec.param("cap"), seed)
    elif rep == "ranking_hist":
        tm = tr.ranking_histogram(cv_proba[:1], cv_proba, y, spec.param("B"))
    else:  # pragma: no cover - table and branches are kept in sync
        raise AssertionError(rep)
    tm = tm.with_q(np.zeros(tm.M.shape[0]))
    prevalence = np.bincount(y, minlength=n_classes) / y.size
    return FittedQuantifier(spec, classifier, tm, prevalence, n_classes)


def sample_representation(fq: FittedQuantifier, X, proba=None) -> np.ndarray:
    """The sample-side vector ``q`` for the fitted method's representation."""
    rep = fq.transfer.representation
    meta = fq.transfer.metadata
    if rep == "feature_hist":
        return tr.histogram_embedding(X, meta["lo"], meta["hi"], meta["bins"]).mean(axis=0)
    if proba is None:
        proba = clf_mod.predict_proba(fq.classifier, X)
    if rep == "hard":
        return tr.embed_hard(np.argmax(proba, axis=1), fq.n).mean(axis=0)
    if rep == "soft":
        return proba.mean(axis=0)
    if rep == "posterior_hist":
        return tr.embed_posterior_hist(proba, meta["bins"]).mean(axis=0)
    if rep == "energy":
        return tr.embed_energy(proba, meta["reference"]).mean(axis=0)
    if rep == "ranking_hist":
        return tr.embed_ranking(proba, meta["bins"]).mean(axis=0)
    raise AssertionError(rep)  # pragma: no cover


def quantify(fq: FittedQuantifier, X, proba=None, solver: SolverConfig | None = None) -> np.ndarray:
    """Estimate the class prevalences of the unlabeled sample ``X``.

    ``proba`` may carry precomputed posteriors of ``fq.classifier`` on ``X``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != fq.d:
        raise DimensionError(f"expected an N x {fq.d} sample, got shape {X.shape}")
    name = fq.spec.name
    if proba is None and name != "HDx" and name != "o-HDx":
        proba = clf_mod.predict_proba(fq.classifier, X)

    if name in ("SLD", "o-SLD"):
        smoothing = None
        if name == "o-SLD":
            smoothing = SmoothingConfig(fq.spec.param("poly_order"), fq.spec.param("interp_factor"))
        return sld(proba, fq.train_prevalence, smoothing).estimate

    tm = fq.transfer.with_q(sample_representation(fq, X, proba))
    if name in ("CC", "PCC"):
        return tm.q
    if name == "IBU":
        smoothing = SmoothingConfig(fq.spec.param("poly_order"), fq.spec.param("interp_factor"))
        return ibu(tm, np.full(fq.n, 1.0 / fq.n), smoothing).estimate

    return minimize(loss_spec(fq, X.shape[0]), tm, solver).estimate


def loss_spec(fq: FittedQuantifier, sample_size: int) -> LossSpec | None:
    """The loss minimised by ``quantify`` for a sample of ``sample_size`` items.

    ``None`` for the methods that do not minimise a loss (CC, PCC, SLD, o-SLD, IBU).
    """
    name = fq.spec.name
    if name not in _LOSS_OF:
        return None
    tau = fq.spec.param("tau") if "tau" in _METHOD_TABLE[name][1] else 0.0
    C = tikhonov(fq.n, 1) if tau > 0 else None
    return LossSpec(_LOSS_OF[name], tau, C, sample_size=sample_size if name == "RUN" else None)


# --- serialisation ------------------------------------------------------------------


def _encode_meta(meta: dict) -> dict:
    out = {}
    for key, value in meta.items():
        if key == "reference":
            out[key] = [g.tolist() for g in value]
        elif isinstance(value, np.ndarray):
            out[key] = value.tolist()
        else:
            out[key] = value
    return out


def _decode_meta(meta: dict) -> dict:
    out = {}
    for key, value in meta.items():
        if key == "reference":
            out[key] = [np.asarray(g, dtype=float).reshape(-1, len(meta["reference"])) for g in value]
        elif key in ("lo", "hi"):
            out[key] = np.asarray(value, dtype=float)
        else:
            out[key] = value
    return out


def to_dict(fq: FittedQuantifier) -> dict:
    return {
        "format": "ordq-fitted-quantifier",
        "format_version": FORMAT_VERSION,
        "method": fq.spec.name,
        "hyperparams": dict(fq.spec.hyperparams),
        "classifier_hyperparams": dict(fq.spec.classifier),
        "n_classes": fq.n,
        "n_features": fq.d,
        "classifier_weights": fq.classifier.weights.tolist(),
        "train_prevalence": fq.train_prevalence.tolist(),
        "representation": fq.transfer.representation,
        "transfer_matrix": fq.transfer.M.tolist(),
        "transfer_metadata": _encode_meta(fq.transfer.metadata),
    }


def from_dict(doc: dict) -> FittedQuantifier:
    if doc.get("format") != "ordq-fitted-quantifier":
        raise ValueError("not a serialised ordq quantifier")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {doc.get('format_version')!r}")
    spec = MethodSpec(doc["method"], dict(doc["hyperparams"]), dict(doc["classifier_hyperparams"]))
    weights = np.asarray(doc["classifier_weights"], dtype=float)
    M = np.asarray(doc["transfer_matrix"], dtype=float)
    tm = tr.TransferModel(np.zeros(M.shape[0]), M, doc["representation"], _decode_meta(doc["transfer_metadata"]))
    return FittedQuantifier(
        spec,
        clf_mod.SoftClassifier(weights),
        tm,
        np.asarray(doc["train_prevalence"], dtype=float),
        int(doc["n_classes"]),
    )


def dumps(fq: FittedQuantifier) -> str:
    return json.dumps(to_dict(fq), indent=1, sort_keys=True) + "\n"


def loads(text: str) -> FittedQuantifier:
    return from_dict(json.loads(text))
