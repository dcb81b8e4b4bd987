"""Command-line entry point.

Exit codes: 0 success, 1 data or model error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchmarkConfig, run as run_benchmark
from .data import SYNTH_KINDS, DataError, load_csv, read_table, subsample, synth, write_csv
from .expr import ExpressionError
from .loss import DegenerateRangeError, check_tau, score
from .models import SymbolicModel, load_model, model_arity, model_features, save_model
from .search import ConfigError, SearchConfig, evolve

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path: Path, command: str, config: dict, seed, inputs: list[str], started: datetime) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "version": __version__,
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")


def _tau(value: str) -> float:
    try:
        return check_tau(float(value))
    except ValueError as exc:
        raise ConfigError(f"--tau: {exc}") from None


def cmd_fit(args) -> int:
    started = datetime.now(timezone.utc)
    tau = _tau(args.tau)
    cfg = SearchConfig.from_file(args.config) if args.config else SearchConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    dataset = load_csv(args.data, args.target)
    if args.max_train_rows is not None:
        dataset = subsample(dataset, args.max_train_rows, cfg.seed)
    front = evolve(dataset, tau, cfg, deterministic=args.deterministic)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "front.csv").write_text(front.to_csv(dataset.names), encoding="utf-8")
    for mode, fname in (("best-loss", "model_best.json"), ("elbow", "model_elbow.json")):
        entry = front.select(mode)
        model = SymbolicModel(entry.expr, tau, dataset.names, dataset.target_name, mode, {"train_loss": entry.loss})
        save_model(model, out / fname)
        print(f"{mode}: complexity={entry.complexity} loss={entry.loss:.6g}  {model.to_dict()['expression']}")
    config = {"tau": tau, "search": cfg.to_dict(), "deterministic": args.deterministic,
              "max_train_rows": args.max_train_rows, "target": args.target}
    write_manifest(out / "manifest.json", "fit", config, cfg.seed, [args.data] + ([args.config] if args.config else []), started)
    return EXIT_OK


def _feature_matrix(model, path: str) -> tuple[np.ndarray, np.ndarray | None]:
    """Pick the model's feature columns from a CSV; also return the target column if present."""
    header, table = read_table(path)
    names = list(model_features(model))
    d = model_arity(model)
    target = getattr(model, "target", None)
    if names and all(n in header for n in names):
        X = table[:, [header.index(n) for n in names]]
        rest = [i for i, h in enumerate(header) if h not in names]
        if target in header:
            y = table[:, header.index(target)]
        else:
            y = table[:, rest[-1]] if rest else None
        return X, y
    if table.shape[1] == d:
        return table, None
    if table.shape[1] == d + 1:
        return table[:, :d], table[:, d]
    raise ExpressionError(f"model expects {d} features; {path} has {table.shape[1]} columns")


def cmd_predict(args) -> int:
    started = datetime.now(timezone.utc)
    model = _load(args.model)
    X, _ = _feature_matrix(model, args.data)
    pred = model.predict(X)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as handle:
            _write_predictions(handle, pred)
        write_manifest(Path(str(args.out) + ".manifest.json"), "predict", {}, None, [args.model, args.data], started)
    else:
        _write_predictions(sys.stdout, pred)
    return EXIT_OK


def _write_predictions(handle, pred) -> None:
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(["prediction"])
    for p in pred:
        writer.writerow([repr(float(p))])


def _load(path):
    try:
        return load_model(path)
    except (ValueError, ExpressionError) as exc:
        raise DataError(str(exc)) from exc


def cmd_evaluate(args) -> int:
    model = _load(args.model)
    tau = _tau(args.tau) if args.tau is not None else model.tau
    X, y = _feature_matrix(model, args.data)
    if y is None:
        raise DataError(f"{args.data}: no target column to evaluate against")
    rec = score(tau, y, model.predict(X), model.parsimony)
    for key in ("nql", "coverage", "ace", "mean_pinball", "parsimony"):
        print(f"{key}: {getattr(rec, key)!r}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    started = datetime.now(timezone.utc)
    cfg = BenchmarkConfig.from_file(args.config)
    report = run_benchmark(cfg)
    out = Path(args.out)
    report.write(out)
    inputs = [args.config] + [e["path"] for e in cfg.datasets if "path" in e]
    write_manifest(out / "manifest.json", "benchmark", json.loads(Path(args.config).read_text()), cfg.seed, inputs, started)
    for a in report.aggregates:
        if a["metric"] in ("nql", "ace", "parsimony"):
            sd = "" if a["sd"] is None else f" ± {a['sd']:.4g}"
            print(f"{a['model']:>10} tau={a['tau']:<4} {a['metric']:>9}: {a['mean']:.4g}{sd}")
    return EXIT_OK


def cmd_synth(args) -> int:
    started = datetime.now(timezone.utc)
    dataset = synth(args.kind, args.n, seed=args.seed)
    write_csv(dataset, args.out)
    write_manifest(Path(str(args.out) + ".manifest.json"), "synth", {"kind": args.kind, "n": args.n}, args.seed, [], started)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="symqr", description="Symbolic quantile regression")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="search for expressions and write the Pareto front")
    p.add_argument("data")
    p.add_argument("--tau", required=True)
    p.add_argument("--config", help="key = value search parameters")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--target", help="target column (default: last)")
    p.add_argument("--deterministic", action="store_true", help="single process, bit-reproducible")
    p.add_argument("--max-train-rows", type=int, help="subsample training rows (10000 gives SQR10K)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict with a saved model")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="nql, coverage, ace and parsimony of a saved model")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--tau")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="run a cross-validated benchmark from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", default="benchmark-report")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("kind", choices=sorted(SYNTH_KINDS))
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"symqr: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"symqr: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ExpressionError, DegenerateRangeError, ValueError, OSError) as exc:
        print(f"symqr: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
