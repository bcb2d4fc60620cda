"""End-to-end evaluation: split, draw samples, select hyperparameters, test, report.

The configuration is a JSON document (``format_version`` 1)::

    {
      "format_version": 1,
      "seed": 0,
      "data": {"path": "data.csv"}            # or {"synth": {"n", "d", "size", "overlap", "prevalence"}}
      "n_classes": null,                       # inferred from the labels when null
      "split": {"train": 2000, "val_pool": 2000, "test_pool": 4000},
      "protocols": {"sample_size": 1000, "n_val": 300, "n_test": 1000,
                    "app": true, "app_oq_percent": 20, "real_prevalences": null},
      "methods": ["PACC", {"name": "o-PACC", "grid": [{"tau": 0.001}]}],
      "classifier_grid": [{}],
      "measure": "NMD",
      "cv_folds": 10,
      "output_dir": "out"
    }

Relative paths are resolved against the directory holding the config file.
"""
from __future__ import annotations

import copy
import csv
import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classifier as clf_mod
from . import io
from . import protocols as prot
from . import quantifiers as Q
from .exceptions import ConfigError, DataError, OrdqError, TooFewPairs, UnknownMethod
from .metrics import MEASURE_FUNCTIONS, MEASURES, nmd, summarize, wilcoxon_signed_rank
from .simplex import jaggedness

CONFIG_VERSION = 1
SIGNIFICANCE_LEVEL = 0.01

DEFAULT_CONFIG = {
    "format_version": CONFIG_VERSION,
    "seed": None,
    "data": None,
    "n_classes": None,
    "split": {"train": 2000, "val_pool": 2000, "test_pool": 4000},
    "protocols": {
        "sample_size": 1000,
        "n_val": 300,
        "n_test": 1000,
        "app": True,
        "app_oq_percent": 20,
        "real_prevalences": None,
    },
    "methods": list(Q.METHODS),
    "classifier_grid": [{}],
    "measure": "NMD",
    "cv_folds": 10,
    "output_dir": "ordq-report",
}


def derive_seed(seed: int, tag: str) -> int:
    """Independent sub-seed for one stage of the pipeline."""
    return int(np.random.SeedSequence([seed, zlib.crc32(tag.encode())]).generate_state(1)[0])


# --- configuration ------------------------------------------------------------------------


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Read a JSON config (optional), apply ``overrides`` and validate the result."""
    doc = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        base_dir = path.parent
    unknown = set(doc) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    cfg = _merge(DEFAULT_CONFIG, doc)
    cfg = _merge(cfg, overrides or {})
    validate_config(cfg)
    # resolve relative paths once so reruns from other directories agree
    if "path" in cfg["data"]:
        cfg["data"]["path"] = str((base_dir / cfg["data"]["path"]).resolve())
    if cfg["protocols"]["real_prevalences"]:
        cfg["protocols"]["real_prevalences"] = str((base_dir / cfg["protocols"]["real_prevalences"]).resolve())
    cfg["output_dir"] = str((base_dir / cfg["output_dir"]).resolve())
    return cfg


def _require_int(value, name, minimum):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")


def validate_config(cfg: dict):
    if cfg["format_version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported format_version {cfg['format_version']!r}")
    if cfg["seed"] is None:
        raise ConfigError("a seed is required")
    _require_int(cfg["seed"], "seed", 0)
    data = cfg["data"]
    if not isinstance(data, dict) or len(data) != 1 or not ({"path", "synth"} & set(data)):
        raise ConfigError("data must be {'path': ...} or {'synth': {...}}")
    if "synth" in data:
        synth = data["synth"]
        missing = {"n", "d", "size", "overlap"} - set(synth)
        if missing:
            raise ConfigError(f"data.synth misses {sorted(missing)}")
        extra = set(synth) - {"n", "d", "size", "overlap", "prevalence"}
        if extra:
            raise ConfigError(f"data.synth has unknown keys {sorted(extra)}")
    for key in ("train", "val_pool", "test_pool"):
        _require_int(cfg["split"].get(key), f"split.{key}", 1)
    if set(cfg["split"]) - {"train", "val_pool", "test_pool"}:
        raise ConfigError(f"unknown split keys {sorted(set(cfg['split']) - {'train', 'val_pool', 'test_pool'})}")
    pc = cfg["protocols"]
    if set(pc) - set(DEFAULT_CONFIG["protocols"]):
        raise ConfigError(f"unknown protocols keys {sorted(set(pc) - set(DEFAULT_CONFIG['protocols']))}")
    for key in ("sample_size", "n_val", "n_test"):
        _require_int(pc[key], f"protocols.{key}", 1)
    pct = pc["app_oq_percent"]
    if pct is not None and (isinstance(pct, bool) or not isinstance(pct, (int, float)) or not 0 < pct <= 100):
        raise ConfigError(f"protocols.app_oq_percent must lie in (0, 100], got {pct!r}")
    if not pc["app"] and pct is None and not pc["real_prevalences"]:
        raise ConfigError("no protocol enabled")
    if cfg["measure"] not in MEASURES:
        raise ConfigError(f"measure must be one of {MEASURES}, got {cfg['measure']!r}")
    _require_int(cfg["cv_folds"], "cv_folds", 2)
    if cfg["n_classes"] is not None:
        _require_int(cfg["n_classes"], "n_classes", 3)
    if not isinstance(cfg["methods"], list) or not cfg["methods"]:
        raise ConfigError("methods must be a non-empty list")
    if not isinstance(cfg["classifier_grid"], list) or not cfg["classifier_grid"]:
        raise ConfigError("classifier_grid must be a non-empty list of objects")
    for entry in cfg["classifier_grid"]:
        if not isinstance(entry, dict) or set(entry) - set(Q.CLASSIFIER_KEYS):
            raise ConfigError(f"classifier_grid entries may only use {Q.CLASSIFIER_KEYS}, got {entry!r}")
    method_entries(cfg)


def method_entries(cfg: dict) -> list[tuple[str, list[dict]]]:
    """``(name, grid)`` for every configured method, in config order."""
    out, seen = [], set()
    for entry in cfg["methods"]:
        if isinstance(entry, str):
            name, grid = entry, None
        elif isinstance(entry, dict) and "name" in entry and set(entry) <= {"name", "grid"}:
            name, grid = entry["name"], entry.get("grid")
        else:
            raise ConfigError(f"method entry {entry!r} must be a name or {{'name', 'grid'}}")
        if name in seen:
            raise ConfigError(f"method {name!r} listed twice")
        seen.add(name)
        try:
            grid = Q.default_grid(name) if grid is None else grid
            if not isinstance(grid, list) or not grid:
                raise ConfigError(f"grid of {name} must be a non-empty list")
            for hp in grid:
                Q.MethodSpec(name, dict(hp))
        except UnknownMethod as exc:
            raise ConfigError(str(exc)) from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"method {name}: {exc}") from None
        out.append((name, [dict(hp) for hp in grid]))
    return out


# --- pipeline ----------------------------------------------------------------------------------


@dataclass
class _Family:
    """One list of drawn samples from one pool."""

    pool: np.ndarray  # dataset row indices of the pool
    draws: list


def _load_data(cfg):
    data = cfg["data"]
    if "path" in data:
        X, y = io.read_dataset(data["path"])
    else:
        s = data["synth"]
        try:
            X, y = prot.synth_ordinal(
                s["n"], s["d"], s["size"], s["overlap"], s.get("prevalence"), derive_seed(cfg["seed"], "synth")
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"data.synth: {exc}") from None
    n = cfg["n_classes"] if cfg["n_classes"] is not None else int(y.max()) + 1
    if y.max() >= n:
        raise DataError(f"labels reach {int(y.max())} but n_classes is {n}")
    if n < 3:
        raise DataError(f"ordinal quantification needs at least 3 classes, found {n}")
    return X, y, n


def _protocol_views(cfg, families):
    """``protocol name -> (family key, positions within that family)``."""
    pc = cfg["protocols"]
    views = {}
    for split in ("val", "test"):
        app = families[(split, "app")]
        if pc["app"]:
            views[("APP", split)] = ("app", np.arange(len(app.draws)))
        if pc["app_oq_percent"] is not None:
            realized = [d.realized_prevalence for d in app.draws]
            keep = prot.smoothest_indices(realized, pc["app_oq_percent"])
            views[(f"APP-OQ({pc['app_oq_percent']:g}%)", split)] = ("app", keep)
        if (split, "real") in families:
            views[("real", split)] = ("real", np.arange(len(families[(split, "real")].draws)))
    return views


class _Posteriors:
    """Trained classifier, its out-of-fold training posteriors and pool posteriors, per setting."""

    def __init__(self, X, y, n, train_idx, cv_folds, seed):
        self.X, self.y, self.n = X, y, n
        self.train_idx = train_idx
        self.cv_folds, self.seed = cv_folds, seed
        self._cache = {}

    def get(self, params: dict):
        key = json.dumps(params, sort_keys=True)
        if key not in self._cache:
            Xt, yt = self.X[self.train_idx], self.y[self.train_idx]
            clf = clf_mod.train(Xt, yt, self.n, **params)
            cv = clf_mod.cross_val_proba(Xt, yt, self.n, self.cv_folds, self.seed, **params)
            proba = clf_mod.predict_proba(clf, self.X)
            self._cache[key] = (clf, cv, proba)
        return self._cache[key]


def run_experiment(cfg: dict) -> dict:
    """Execute the configured experiment and write the report files.

    :returns: the in-memory report (summary rows and chosen hyperparameters)
    """
    seed = cfg["seed"]
    pc = cfg["protocols"]
    X, y, n = _load_data(cfg)
    sp = cfg["split"]
    try:
        train_idx, val_idx, test_idx = prot.stratified_split(
            y, n, sp["train"], sp["val_pool"], sp["test_pool"], derive_seed(seed, "split")
        )
    except OrdqError as exc:
        raise DataError(str(exc)) from None

    families = {}
    for split, pool in (("val", val_idx), ("test", test_idx)):
        count = pc["n_val"] if split == "val" else pc["n_test"]
        pcfg = prot.ProtocolConfig(count, pc["sample_size"], None, derive_seed(seed, f"{split}-app"))
        try:
            families[(split, "app")] = _Family(pool, prot.draw_app(y[pool], n, pcfg))
            if pc["real_prevalences"]:
                P = io.read_prevalences(pc["real_prevalences"], n)
                draws = prot.draw_at_prevalences(y[pool], n, P, pc["sample_size"], derive_seed(seed, f"{split}-real"))
                families[(split, "real")] = _Family(pool, draws)
        except DataError:
            raise
        except OrdqError as exc:
            raise DataError(f"{split} samples: {exc}") from None
    views = _protocol_views(cfg, families)
    protocol_names = list(dict.fromkeys(name for name, _ in views))

    measure_fn = MEASURE_FUNCTIONS[cfg["measure"]]
    posteriors = _Posteriors(X, y, n, train_idx, cfg["cv_folds"], derive_seed(seed, "cv"))
    train_prev = np.bincount(y[train_idx], minlength=n) / train_idx.size
    estimates = {}  # (method, candidate, split, family, position) -> estimate

    def estimate(fq, cand_key, split, fam_key, pos, proba):
        key = cand_key + (split, fam_key, int(pos))
        if key not in estimates:
            family = families[(split, fam_key)]
            rows = family.pool[family.draws[pos].indices]
            estimates[key] = Q.quantify(fq, X[rows], proba=proba[rows])
        return estimates[key]

    def score(split, fam_key, pos, p_hat):
        return float(measure_fn(families[(split, fam_key)].draws[pos].realized_prevalence, p_hat))

    selection_rows, chosen, test_scores, test_estimates = [], {}, {}, {}
    for name, grid in method_entries(cfg):
        candidates = [(hp, cp) for cp in cfg["classifier_grid"] for hp in grid]
        fitted = {}

        def fitted_for(c):
            if c not in fitted:
                hp, cp = candidates[c]
                clf, cv, proba = posteriors.get(cp)
                spec = Q.MethodSpec(name, dict(hp), dict(cp))
                fitted[c] = (Q.fit(spec, X[train_idx], y[train_idx], n, cfg["cv_folds"],
                                   derive_seed(seed, "cv"), classifier=clf, cv_proba=cv), proba)
            return fitted[c]

        for protocol in protocol_names:
            fam_key, positions = views[(protocol, "val")]
            means = []
            for c in range(len(candidates)):
                fq, proba = fitted_for(c)
                vals = [score("val", fam_key, p, estimate(fq, (name, c), "val", fam_key, p, proba)) for p in positions]
                means.append(float(np.mean(vals)))
            best = int(np.argmin(means))  # first minimum wins ties
            for c, m in enumerate(means):
                hp, cp = candidates[c]
                selection_rows.append([protocol, name, c, json.dumps(hp, sort_keys=True),
                                       json.dumps(cp, sort_keys=True), io.format_float(m), int(c == best)])
            chosen.setdefault(protocol, {})[name] = {"hyperparams": candidates[best][0], "classifier": candidates[best][1]}
            fq, proba = fitted_for(best)
            fam_key, positions = views[(protocol, "test")]
            ests = [estimate(fq, (name, best), "test", fam_key, p, proba) for p in positions]
            test_estimates[(protocol, name)] = (positions, ests)
            test_scores[(protocol, name)] = np.array([score("test", fam_key, p, e) for p, e in zip(positions, ests)])

    method_names = [name for name, _ in method_entries(cfg)]
    summary = _summarize(protocol_names, method_names, test_scores)
    stats = _protocol_stats(families, views, train_prev)
    report = {"summary": summary, "chosen": chosen, "protocol_stats": stats}
    _write_outputs(cfg, n, protocol_names, method_names, test_scores, test_estimates,
                   summary, selection_rows, chosen, stats, families, views)
    return report


# --- reporting ------------------------------------------------------------------------------------


def _p_value(a, b) -> float | None:
    if a.size < 10:
        return None
    try:
        return wilcoxon_signed_rank(a, b)
    except TooFewPairs:
        return 1.0  # almost every paired difference is zero


def _summarize(protocol_names, method_names, test_scores) -> list[dict]:
    rows = []
    for protocol in protocol_names:
        stats = {m: summarize(test_scores[(protocol, m)]) for m in method_names}
        best = min(method_names, key=lambda m: stats[m][0])  # min keeps the first on ties
        for m in method_names:
            p = None if m == best else _p_value(test_scores[(protocol, m)], test_scores[(protocol, best)])
            rows.append({
                "method": m,
                "protocol": protocol,
                "mean": stats[m][0],
                "std": stats[m][1],
                "best": m == best,
                "p_value_vs_best": p,
                "significant": p is not None and p < SIGNIFICANCE_LEVEL,
            })
    return rows


def _protocol_stats(families, views, train_prev) -> list[dict]:
    rows = []
    for (protocol, split), (fam_key, positions) in views.items():
        draws = [families[(split, fam_key)].draws[p] for p in positions]
        target = np.array([d.target_prevalence for d in draws])
        realized = np.array([d.realized_prevalence for d in draws])
        rows.append({
            "protocol": protocol,
            "split": split,
            "n_samples": len(draws),
            "mean_xi1_target": float(jaggedness(target, 1).mean()),
            "mean_xi1_realized": float(jaggedness(realized, 1).mean()),
            "mean_nmd_shift": float(nmd(np.broadcast_to(train_prev, realized.shape), realized).mean()),
            "rejections": int(sum(d.rejections for d in draws)),
        })
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return io.format_float(value)
    return str(value)


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def format_summary_table(summary: list[dict], measure: str) -> str:
    """Aligned plain-text rendering of the summary rows."""
    header = ["method", "protocol", f"mean {measure}", "std", "best", "p_value_vs_best", "significant"]
    body = []
    for r in summary:
        p = r["p_value_vs_best"]
        body.append([
            r["method"], r["protocol"], f"{r['mean']:.4f}", f"{r['std']:.4f}",
            "*" if r["best"] else "", "" if p is None else f"{p:.3g}",
            "" if r["best"] else ("yes" if r["significant"] else "no"),
        ])
    widths = [max(len(row[j]) for row in [header] + body) for j in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in [header] + body]
    return "\n".join(lines) + "\n"


def _write_outputs(cfg, n, protocol_names, method_names, test_scores, test_estimates,
                   summary, selection_rows, chosen, stats, families, views):
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    measure = cfg["measure"]

    score_rows, est_rows = [], []
    for protocol in protocol_names:
        for m in method_names:
            positions, ests = test_estimates[(protocol, m)]
            for p, s, e in zip(positions, test_scores[(protocol, m)], ests):
                score_rows.append([protocol, m, int(p), float(s)])
                est_rows.append([protocol, m, int(p)] + [float(v) for v in e])
    _write_csv(out / "scores.csv", ["protocol", "method", "sample", measure], score_rows)
    _write_csv(out / "estimates.csv", ["protocol", "method", "sample"] + [f"p{j}" for j in range(n)], est_rows)

    _write_csv(
        out / "summary.csv",
        ["method", "protocol", "mean", "std", "best", "p_value_vs_best", "significant"],
        [[r["method"], r["protocol"], r["mean"], r["std"], r["best"], r["p_value_vs_best"], r["significant"]]
         for r in summary],
    )
    (out / "summary.txt").write_text(format_summary_table(summary, measure), encoding="utf-8")

    sig_rows = []
    for protocol in protocol_names:
        for a in method_names:
            row = [protocol, a]
            for b in method_names:
                row.append(None if a == b else _p_value(test_scores[(protocol, a)], test_scores[(protocol, b)]))
            sig_rows.append(row)
    _write_csv(out / "significance.csv", ["protocol", "method"] + method_names, sig_rows)

    _write_csv(out / "selection.csv",
               ["protocol", "method", "candidate", "hyperparams", "classifier", f"val_mean_{measure}", "chosen"],
               selection_rows)
    (out / "hyperparameters.json").write_text(json.dumps(chosen, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    _write_csv(out / "protocol_stats.csv",
               ["protocol", "split", "n_samples", "mean_xi1_target", "mean_xi1_realized", "mean_nmd_shift", "rejections"],
               [[r["protocol"], r["split"], r["n_samples"], r["mean_xi1_target"], r["mean_xi1_realized"],
                 r["mean_nmd_shift"], r["rejections"]] for r in stats])
    (out / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n", encoding="utf-8")
