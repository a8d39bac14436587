"""Command-line entry point.

Subcommands: train, eval, gradcheck, synth, inspect, sweep.  Every command
is deterministic given its flags and seed; outputs land under --out with
fixed filenames.  IME_THREADS caps evaluation parallelism.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .checks import LOSS_TERMS, gradient_suite
from .data import PATTERNS, TKGDataset, generate_synthetic, write_splits
from .evaluation import evaluate
from .model import pooling_weights
from .tensor import no_grad
from .trainer import TrainConfig, load_checkpoint, train, _sibling_bin

__all__ = ["main"]


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _resolve_manifest(path: str) -> str:
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.txt")
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint manifest not found: {path}")
    return path


def cmd_train(args) -> int:
    config = TrainConfig.from_file(args.config)
    result = train(config, args.out, resume=args.resume, log=print)
    print(f"finished after {result.epochs_run} epochs; best validation MRR "
          f"{result.best_mrr:.4f}" if result.best_mrr >= 0 else
          f"finished after {result.epochs_run} epochs (no validation split)")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    return 0


def cmd_eval(args) -> int:
    manifest = _resolve_manifest(args.checkpoint)
    model, _, _, config = load_checkpoint(_sibling_bin(manifest), manifest)
    dataset = TKGDataset.load(config.data_dir)
    if args.split not in dataset.splits:
        return _fail(f"unknown split {args.split!r}; choose from {sorted(dataset.splits)}")
    queries = dataset.augmented(args.split)
    filter_index = dataset.filter_index()
    if args.per_relation:
        report, by_relation = evaluate(model, queries, filter_index, per_relation=True)
    else:
        report = evaluate(model, queries, filter_index)
        by_relation = None
    print(f"split: {args.split}")
    print(report.format())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "report.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("split,mrr,hits1,hits3,hits10,n_queries\n")
            fh.write(f"{args.split},{report.csv_row()}\n")
        if by_relation is not None:
            rel_path = os.path.join(args.out, "report_per_relation.csv")
            n_base = dataset.vocab.n_relations
            with open(rel_path, "w", encoding="utf-8") as fh:
                fh.write("relation,direction,mrr,hits1,hits3,hits10,n_queries\n")
                for r, rep in by_relation.items():
                    label = dataset.vocab.relations[r % n_base]
                    direction = "forward" if r < n_base else "reciprocal"
                    fh.write(f"{label},{direction},{rep.csv_row()}\n")
            print(f"per-relation rows: {rel_path}")
        print(f"report: {path}")
    if by_relation is not None and not args.out:
        n_base = dataset.vocab.n_relations
        for r, rep in by_relation.items():
            label = dataset.vocab.relations[r % n_base]
            direction = "fwd" if r < n_base else "rcp"
            print(f"  {label} [{direction}]: MRR {rep.mrr:.4f} over {rep.n_queries}")
    return 0


def cmd_gradcheck(args) -> int:
    config = TrainConfig.from_file(args.config)
    reports = gradient_suite(dim=config.dim, seed=config.seed)
    ok = True
    for term in LOSS_TERMS:
        report = reports[term]
        ok &= report.passed
        print(f"[{term}] max rel error {report.max_rel_error:.3e} "
              f"(tol {report.tol:.1e}) -> {'ok' if report.passed else 'FAIL'}")
    if not ok:
        worst = max(reports.values(), key=lambda r: r.max_rel_error)
        print(worst.format(), file=sys.stderr)
        return 1
    return 0


def cmd_synth(args) -> int:
    splits = generate_synthetic(args.entities, args.relations, args.timestamps, args.pattern, args.seed)
    write_splits(splits, args.out)
    sizes = {name: len(qs) for name, qs in splits.items()}
    print(f"wrote {args.pattern} dataset to {args.out}: {sizes}")
    return 0


def cmd_inspect(args) -> int:
    manifest = _resolve_manifest(args.checkpoint)
    model, _, state, _ = load_checkpoint(_sibling_bin(manifest), manifest)
    with no_grad():
        weights = pooling_weights(model.amp).data
    print(f"epoch {state.epoch}, step {state.step}, best validation MRR {state.best_mrr:.4f}")
    print("pooling weights (sorted position -> weight):")
    for i, w in enumerate(weights):
        print(f"  {i:2d}  {w:.6f}")
    print(f"  sum {weights.sum():.12f}")
    print("parameter norms:")
    for p in model.parameters():
        print(f"  {p.name:<24} {np.linalg.norm(p.data):.6f}")
    return 0


def cmd_sweep(args) -> int:
    config = TrainConfig.from_file(args.config)
    if args.param == "dim":
        values = [int(v) for v in args.values.split(",") if v]
    else:
        values = [float(v) for v in args.values.split(",") if v]
    if not values:
        return _fail("--values must be a non-empty comma-separated list")
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for value in values:
        run_config = replace(config, **{args.param: value})
        run_dir = os.path.join(args.out, f"{args.param}_{value}")
        result = train(run_config, run_dir)
        manifest = _resolve_manifest(result.manifest_path)
        model, _, _, saved = load_checkpoint(_sibling_bin(manifest), manifest)
        dataset = TKGDataset.load(saved.data_dir)
        report = evaluate(model, dataset.augmented("valid"), dataset.filter_index())
        rows.append((value, report))
        print(f"{args.param}={value}: valid MRR {report.mrr:.4f}")
    path = os.path.join(args.out, "sweep.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{args.param},mrr,hits1,hits3,hits10,n_queries\n")
        for value, report in rows:
            fh.write(f"{value},{report.csv_row()}\n")
    print(f"sweep results: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ime",
        description="Multi-curvature temporal knowledge graph completion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", default=None, help="manifest of a checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="filtered link-prediction metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True, help="manifest file or run directory")
    p.add_argument("--split", required=True, choices=("train", "valid", "test"))
    p.add_argument("--per-relation", action="store_true", help="also emit per-relation MRR rows")
    p.add_argument("--out", default=None, help="directory for report.csv")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--config", required=True, help="config supplying dim and seed")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a deterministic synthetic dataset")
    p.add_argument("--pattern", required=True, choices=PATTERNS)
    p.add_argument("--entities", required=True, type=int)
    p.add_argument("--relations", type=int, default=2)
    p.add_argument("--timestamps", type=int, default=4)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, help="output directory for TSV splits")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("inspect", help="print pooling weights and parameter norms")
    p.add_argument("--checkpoint", required=True, help="manifest file or run directory")
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("sweep", help="desk-scale grid over one hyperparameter")
    p.add_argument("--param", required=True, choices=("alpha", "beta", "gamma", "dim"))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--config", required=True, help="base config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # CLI boundary: report and exit nonzero
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
