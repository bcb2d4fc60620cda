"""Command-line interface: ``ordq <command> ...``.

Exit codes: 0 on success, 1 on configuration or usage errors, 2 on data errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment as exp
from . import io
from . import protocols as prot
from . import quantifiers as Q
from .exceptions import ConfigError, DataError, OrdqError, UnknownMethod
from .metrics import MEASURE_FUNCTIONS, MEASURES, summarize


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _hyper(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


# --- commands ------------------------------------------------------------------------------------


def cmd_synth(args):
    X, y = prot.synth_ordinal(args.n, args.d, args.size, args.overlap, args.prevalence, args.seed)
    io.write_dataset(args.out, X, y)


def cmd_split(args):
    X, y = io.read_dataset(args.data)
    n = args.n_classes or int(y.max()) + 1
    try:
        parts = prot.stratified_split(y, n, args.train, args.val_pool, args.test_pool, args.seed)
    except OrdqError as exc:
        raise DataError(str(exc)) from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, idx in zip(("train", "val_pool", "test_pool"), parts):
        io.write_dataset(out / f"{name}.csv", X[idx], y[idx])


def cmd_sample(args):
    X, y = io.read_dataset(args.data)
    n = args.n_classes or int(y.max()) + 1
    cfg = prot.ProtocolConfig(args.n_samples, args.sample_size, args.retain_percent, args.seed)
    try:
        draws = prot.draw_app(y, n, cfg)
    except OrdqError as exc:
        raise DataError(str(exc)) from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "samples.csv").open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["sample", "file", "rejections"] + [f"target{j}" for j in range(n)]
                        + [f"realized{j}" for j in range(n)])
        for i, d in enumerate(draws):
            name = f"sample_{i:05d}.csv"
            io.write_dataset(out / name, X[d.indices], y[d.indices])
            writer.writerow([i, name, d.rejections] + [io.format_float(v) for v in d.target_prevalence]
                            + [io.format_float(v) for v in d.realized_prevalence])


def cmd_fit(args):
    X, y = io.read_dataset(args.data)
    n = args.n_classes or int(y.max()) + 1
    hyper = dict(args.hyper or [])
    clf_params = {k: hyper.pop(k) for k in list(hyper) if k in Q.CLASSIFIER_KEYS}
    try:
        spec = Q.MethodSpec(args.method, hyper, clf_params)
    except UnknownMethod as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        fq = Q.fit(spec, X, y, n, args.cv_folds, args.seed)
    except OrdqError as exc:
        raise DataError(str(exc)) from None
    Path(args.out).write_text(Q.dumps(fq), encoding="utf-8")


def _load_model(path):
    try:
        return Q.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"{path}: cannot read model ({exc.strerror})") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a valid model file ({exc})") from None


def _quantify_file(fq, path):
    X, y = io.read_dataset(path, require_labels=False)
    try:
        return Q.quantify(fq, X), y
    except OrdqError as exc:
        raise DataError(f"{path}: {exc}") from None


def cmd_quantify(args):
    fq = _load_model(args.model)
    p_hat, _ = _quantify_file(fq, args.sample)
    print(" ".join(io.format_float(v) for v in p_hat))


def cmd_evaluate(args):
    fq = _load_model(args.model)
    index = Path(args.samples) / "samples.csv"
    try:
        with index.open(newline="", encoding="utf-8") as handle:
            files = [row["file"] for row in csv.DictReader(handle)]
    except (OSError, KeyError) as exc:
        raise DataError(f"{index}: cannot read sample index ({exc})") from None
    fn = MEASURE_FUNCTIONS[args.measure]
    rows = []
    for i, name in enumerate(files):
        p_hat, y = _quantify_file(fq, Path(args.samples) / name)
        if y is None:
            raise DataError(f"{name}: labels are required for evaluation")
        truth = np.bincount(y, minlength=fq.n) / y.size
        rows.append([i, name, io.format_float(fn(truth, p_hat))] + [io.format_float(v) for v in p_hat])
    header = ["sample", "file", args.measure] + [f"p{j}" for j in range(fq.n)]
    handle = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if args.out:
            handle.close()
    mean, std = summarize([float(r[2]) for r in rows])
    print(f"{fq.spec.name}: mean {args.measure} {mean:.4f} +- {std:.4f} over {len(rows)} samples", file=sys.stderr)


def cmd_experiment(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["output_dir"] = str(Path(args.out_dir).resolve())
    if args.measure is not None:
        overrides["measure"] = args.measure
    if args.methods is not None:
        overrides["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.data is not None:
        overrides["data"] = {"path": str(Path(args.data).resolve())}
    if args.cv_folds is not None:
        overrides["cv_folds"] = args.cv_folds
    proto = {k: v for k, v in (("n_val", args.n_val), ("n_test", args.n_test),
                               ("sample_size", args.sample_size), ("app_oq_percent", args.percent)) if v is not None}
    if proto:
        overrides["protocols"] = proto
    if args.config is None and "data" not in overrides:
        raise ConfigError("experiment needs --config or --data")
    if args.config is None:
        overrides.setdefault("output_dir", str(Path("ordq-report").resolve()))
    cfg = exp.load_config(args.config, overrides)
    report = exp.run_experiment(cfg)
    print(exp.format_summary_table(report["summary"], cfg["measure"]), end="")


def cmd_protocol_stats(args):
    rows = prot.protocol_statistics(args.n, args.draws, tuple(args.percents), args.seed)
    width = max(len(r["protocol"]) for r in rows)
    print(f"{'protocol'.ljust(width)}  mean_xi1  mean_nmd_shift")
    for r in rows:
        print(f"{r['protocol'].ljust(width)}  {r['xi1']:.4f}    {r['nmd_shift']:.4f}")


# --- parser ------------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ordq", description="Ordinal quantification experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic ordinal dataset")
    p.add_argument("--n", type=int, required=True, help="number of classes")
    p.add_argument("--d", type=int, required=True, help="number of features")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--overlap", type=float, default=0.67, help="per-class standard deviation")
    p.add_argument("--prevalence", type=_floats, default=None, help="comma-separated class weights")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="stratified train / validation pool / test pool split")
    p.add_argument("--data", required=True)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--val-pool", type=int, required=True)
    p.add_argument("--test-pool", type=int, required=True)
    p.add_argument("--n-classes", type=int, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("sample", help="draw APP (or APP-OQ) samples from a pool")
    p.add_argument("--data", required=True)
    p.add_argument("--n-samples", type=int, required=True)
    p.add_argument("--sample-size", type=int, required=True)
    p.add_argument("--retain-percent", type=float, default=None, help="keep only the smoothest x%% (APP-OQ)")
    p.add_argument("--n-classes", type=int, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fit", help="train a quantifier and save it as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--method", required=True, help=", ".join(Q.METHODS))
    p.add_argument("--hyper", type=_hyper, action="append", metavar="KEY=VALUE",
                   help="method or classifier hyperparameter (repeatable)")
    p.add_argument("--cv-folds", type=int, default=10)
    p.add_argument("--n-classes", type=int, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("quantify", help="print the estimated prevalences of one sample")
    p.add_argument("--model", required=True)
    p.add_argument("--sample", required=True, help="dataset CSV; the label column is optional")
    p.set_defaults(func=cmd_quantify)

    p = sub.add_parser("evaluate", help="score a saved quantifier on a directory written by 'sample'")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--measure", choices=MEASURES, default="NMD")
    p.add_argument("--out", default=None, help="CSV path (default: standard output)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run the full selection and evaluation pipeline")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--data", default=None)
    p.add_argument("--methods", default=None, help="comma-separated method names")
    p.add_argument("--measure", choices=MEASURES, default=None)
    p.add_argument("--n-val", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--sample-size", type=int, default=None)
    p.add_argument("--percent", type=float, default=None, help="APP-OQ retention percent")
    p.add_argument("--cv-folds", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="required unless the config sets it")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("protocol-stats", help="Monte-Carlo jaggedness of APP and APP-OQ prevalences")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--draws", type=int, default=10000)
    p.add_argument("--percents", type=_floats, default=list(prot.APP_OQ_PERCENTS))
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_protocol_stats)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (OrdqError, ValueError) as exc:
        # remaining validation failures stem from argument values
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
