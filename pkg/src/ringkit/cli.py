"""Command-line interface.

Subcommands: build-graphs, stats, train, eval, predict, gradcheck.
Machine-readable JSON goes to stdout (or --out), diagnostics to stderr.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric-check
failure. Flag values override --config file values, which override the
built-in defaults; RINGKIT_THREADS mirrors --threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from . import checks, hiergraph
from .hiergraph import SchemaError
from .model import VocabMismatch
from .rings import RingLimitExceeded
from .smiles import SmilesParseError
from .train import (
    EmptyDataset,
    IndexOutOfRange,
    MissingColumn,
    OverlappingSplits,
    SplitFileError,
    TrainConfig,
    dataset_from_graphs,
    evaluate,
    load_result,
    make_model_config,
    predict,
    split_dataset,
    sweep_max_lr,
    train,
    write_metrics,
)

log = logging.getLogger("ringkit")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_DATA_ERRORS = (
    SmilesParseError, RingLimitExceeded, SchemaError, VocabMismatch,
    EmptyDataset, IndexOutOfRange, OverlappingSplits,
    SplitFileError, hiergraph.EmptyCorpus, FileNotFoundError,
)


class _UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"usage error: {message}", file=sys.stderr)
        self.print_usage(sys.stderr)
        raise _UsageExit(message)


def _emit(payload: dict, out_path: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=False) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _resolve_threads(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("RINGKIT_THREADS")
    return int(env) if env else 1


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise SchemaError("--config must hold a JSON object")
    return obj


def _merged(flag_value, config_file: dict, key: str, default):
    """Precedence: explicit flag > config file > default."""
    if flag_value is not None:
        return flag_value
    if key in config_file:
        return config_file[key]
    return default


def _cmd_build_graphs(args) -> int:
    target_cols = args.targets.split(",") if args.targets else []
    graphs = []
    rejected = []
    with open(args.in_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in [args.smiles_col, *target_cols]
                   if c not in header]
        if missing:
            raise MissingColumn(f"columns {missing} not in header {header}")
        for row_no, row in enumerate(reader, start=2):
            smiles = (row[args.smiles_col] or "").strip()
            try:
                graph = hiergraph.build_hier_graph(
                    smiles, add_virtual=not args.no_virtual)
                if target_cols:
                    graph.targets = [float(row[c]) for c in target_cols]
                graphs.append(graph)
            except (SmilesParseError, RingLimitExceeded, ValueError) as exc:
                rejected.append({"row": row_no, "smiles": smiles,
                                 "reason": str(exc)})
                log.warning("dropped row %d (%s): %s", row_no, smiles, exc)
    if not graphs:
        raise EmptyDataset(f"no parseable rows in {args.in_path}")
    hiergraph.write_jsonl(args.out, graphs)
    n = len(graphs)
    summary = {
        "graphs": n,
        "rejected": len(rejected),
        "avg_atoms": round(sum(len(g.atom_graph.atoms) for g in graphs) / n, 4),
        "avg_bonds": round(sum(len(g.atom_graph.bonds) for g in graphs) / n, 4),
        "avg_rings": round(sum(len(g.ring_graph.rings) for g in graphs) / n, 4),
        "virtual": int(not args.no_virtual),
        "out": args.out,
    }
    _emit(summary, None)
    return EXIT_OK


def _cmd_stats(args) -> int:
    if args.graphs:
        graphs = list(hiergraph.read_jsonl(args.graphs))
    else:
        if not args.in_path or not args.smiles_col:
            raise _UsageExit("stats needs --graphs or --in with --smiles-col")
        graphs = []
        with open(args.in_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or args.smiles_col not in reader.fieldnames:
                raise MissingColumn(f"column {args.smiles_col!r} missing")
            for row in reader:
                smiles = (row[args.smiles_col] or "").strip()
                try:
                    graphs.append(hiergraph.build_hier_graph(smiles))
                except (SmilesParseError, RingLimitExceeded) as exc:
                    log.warning("skipped %s: %s", smiles, exc)
    if not graphs:
        raise EmptyDataset("no graphs to summarize")
    n = len(graphs)
    payload = {
        "graphs": n,
        "avg_nodes": round(sum(len(g.atom_graph.atoms) for g in graphs) / n, 4),
        "avg_edges": round(sum(len(g.atom_graph.bonds) for g in graphs) / n, 4),
        "avg_rings": round(sum(len(g.ring_graph.rings) for g in graphs) / n, 4),
    }
    _emit(payload, args.out)
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg_file = _load_config_file(args.config)
    graphs = list(hiergraph.read_jsonl(args.graphs))
    target_names = args.targets.split(",") if args.targets else None
    ds = dataset_from_graphs(graphs, target_names=target_names)

    seed = int(_merged(args.seed, cfg_file, "seed", 0))
    if args.split_file:
        split_dataset(ds, mode="file", split_file=args.split_file)
    else:
        split_dataset(ds, mode="random", seed=seed)

    profile = _merged(args.profile, cfg_file, "profile", "desk")
    model_overrides = dict(cfg_file.get("model", {}))
    use_virtual = bool(graphs[0].ring_graph.has_virtual)
    model_overrides["use_virtual"] = use_virtual
    model_cfg = make_model_config(profile, **model_overrides)

    config = TrainConfig(
        model=model_cfg,
        epochs=int(_merged(args.epochs, cfg_file, "epochs", 100)),
        batch_size=int(_merged(args.batch_size, cfg_file, "batch_size", 32)),
        max_lr=float(_merged(args.max_lr, cfg_file, "max_lr", 1e-3)),
        seed=seed,
        precision=str(_merged(args.precision, cfg_file, "precision", "f32")),
        standardize_targets=cfg_file.get("standardize_targets"),
    )
    log.info("training config: %s", config)
    sweep_trials = None
    if args.sweep_max_lr:
        result, sweep_trials = sweep_max_lr(ds, config)
    else:
        result = train(ds, config)
    os.makedirs(args.out, exist_ok=True)
    ckpt_dir = os.path.join(args.out, "checkpoint")
    result.save(ckpt_dir)
    metrics_path = os.path.join(args.out, "metrics.jsonl")
    write_metrics(metrics_path, result.metrics)
    last = result.metrics[-1]
    payload = {
        "config": {
            "profile": profile,
            "model": result.config.model.to_json(),
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "max_lr": result.config.max_lr,
            "seed": config.seed,
            "precision": config.precision,
        },
        "checkpoint": ckpt_dir,
        "metrics": metrics_path,
        "final_train_mae": last["train_mae"],
        "final_val_mae": last["val_mae"],
        "best_val_mae": min(
            (m["val_mae"] for m in result.metrics if m["val_mae"]),
            key=lambda v: sum(v) / len(v), default=[]),
    }
    if sweep_trials is not None:
        payload["sweep"] = sweep_trials
    _emit(payload, None)
    return EXIT_OK


def _cmd_eval(args) -> int:
    result = load_result(args.ckpt)
    graphs = list(hiergraph.read_jsonl(args.graphs))
    ds = dataset_from_graphs(graphs, target_names=result.target_names)
    if args.split_file:
        split_dataset(ds, mode="file", split_file=args.split_file)
    report = evaluate(result, ds, split=args.split)
    report["split"] = args.split
    _emit(report, args.out)
    return EXIT_OK


def _cmd_predict(args) -> int:
    result = load_result(args.ckpt)
    smiles: list[str] = list(args.smiles or [])
    if args.in_path:
        with open(args.in_path, "r", encoding="utf-8") as fh:
            smiles.extend(line.strip() for line in fh if line.strip())
    if not smiles:
        raise _UsageExit("predict needs --smiles or --in")
    rows = predict(result, smiles)
    _emit({"targets": result.target_names, "rows": rows}, args.out)
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    op_results = checks.op_level_suite(seed=args.seed)
    report = {
        "ops": {
            name: {"max_rel_error": res.max_rel_error,
                   "checked": res.n_checked, "excluded": res.n_excluded}
            for name, res in sorted(op_results.items())
        },
        "op_tolerance": checks.OP_TOLERANCE,
    }
    failed = [name for name, res in op_results.items()
              if not res.passed(checks.OP_TOLERANCE)]
    if args.full:
        model_results = checks.full_model_suite(seed=args.seed)
        name, err = checks.worst(model_results)
        report["model"] = {
            "worst_parameter": name,
            "max_rel_error": err,
            "parameters": len(model_results),
            "tolerance": checks.MODEL_TOLERANCE,
        }
        failed.extend(
            f"model:{n}" for n, r in model_results.items()
            if not r.passed(checks.MODEL_TOLERANCE))
    report["failed"] = sorted(failed)
    report["status"] = "pass" if not failed else "fail"
    _emit(report, args.out)
    return EXIT_OK if not failed else EXIT_NUMERIC


def build_parser() -> _Parser:
    parser = _Parser(prog="ringkit",
                     description="SMILES -> hierarchical ring graphs -> "
                                 "property regression")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap worker threads (env: RINGKIT_THREADS); "
                             "the current engine is single-process")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="INFO-level diagnostics on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graphs",
                       help="convert a SMILES CSV into a JSONL graph shard")
    p.add_argument("--in", dest="in_path", required=True, help="input CSV")
    p.add_argument("--smiles-col", required=True, help="SMILES column name")
    p.add_argument("--targets", default="",
                   help="comma-separated target column names (optional)")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--no-virtual", action="store_true",
                   help="omit the virtual molecule node")
    p.set_defaults(func=_cmd_build_graphs)

    p = sub.add_parser("stats", help="corpus summary (counts, averages)")
    p.add_argument("--graphs", help="JSONL shard from build-graphs")
    p.add_argument("--in", dest="in_path", help="alternatively, an input CSV")
    p.add_argument("--smiles-col", help="SMILES column for --in")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("train", help="train on a JSONL graph shard")
    p.add_argument("--graphs", required=True, help="JSONL shard with y values")
    p.add_argument("--targets", default="",
                   help="comma-separated target names (metadata)")
    p.add_argument("--profile", choices=["desk", "paper"], default=None,
                   help="model size profile (default desk)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-lr", type=float, default=None)
    p.add_argument("--sweep-max-lr", action="store_true",
                   help="train once per candidate peak rate "
                        "(1e-3, 5e-4, 1e-4, 5e-5) and keep the best "
                        "validation MAE")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--precision", choices=["f32", "f64"], default=None)
    p.add_argument("--split-file", default=None,
                   help="explicit train/val/test index file")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a shard")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--graphs", required=True)
    p.add_argument("--split", default="all",
                   choices=["train", "val", "test", "all"])
    p.add_argument("--split-file", default=None)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="predict properties for SMILES")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--smiles", action="append",
                   help="a SMILES string (repeatable)")
    p.add_argument("--in", dest="in_path",
                   help="file with one SMILES per line")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("gradcheck",
                       help="finite-difference gradient verification")
    p.add_argument("--full", action="store_true",
                   help="also check the full micro model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageExit:
        return EXIT_USAGE
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    args.threads = _resolve_threads(args.threads)
    try:
        return args.func(args)
    except (_UsageExit, MissingColumn) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
