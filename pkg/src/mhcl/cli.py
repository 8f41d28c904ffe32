"""Command line entry point: prepare, train, eval, report-longtail, predict."""
from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import load_prepared, load_tsv, parse_schema, save_prepared, split_table
from .errors import ContractError, MHCLError
from .harness import (
    evaluate_completion,
    evaluate_recommendation,
    model_from_checkpoint,
    report_longtail,
    train,
)
from .objective import decode


def _print_table(title, rows):
    print(title)
    width = max((len(k) for k, _ in rows), default=0)
    for key, value in rows:
        print(f"  {key:<{width}}  {value:>10.4f}")


def cmd_prepare(args):
    table = load_tsv(args.input, parse_schema(args.schema))
    dataset = split_table(table, seed=args.seed)
    save_prepared(args.out, dataset, seed=args.seed)
    print(f"users={dataset.n_users} items={dataset.n_items} train={len(dataset.train)} "
          f"val={len(dataset.val)} test={len(dataset.test)} duplicates={table.duplicates}")


def cmd_train(args):
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    dataset = load_prepared(args.data)
    result = train(config, dataset, verbose=args.verbose)
    save_checkpoint(args.out, result.checkpoint)
    print(f"epochs={len(result.log)} best_val={result.checkpoint.best_metric:.6f}")


def cmd_eval(args):
    dataset = load_prepared(args.data)
    ckpt = load_checkpoint(args.ckpt)
    if args.task == "completion":
        report = evaluate_completion(ckpt, dataset)
        _print_table("completion (test)", [("MSE", report.mse), ("MAE", report.mae)])
    else:
        report = evaluate_recommendation(ckpt, dataset)
        _print_table("recommendation (test)", [("MRR@10", report.mrr_at_10), ("NDCG@10", report.ndcg_at_10)])
    for line in report.lines():
        print(line)


def cmd_report_longtail(args):
    dataset = load_prepared(args.data)
    report = report_longtail(load_checkpoint(args.ckpt), dataset)
    _print_table("MSE by user cohort", list(report.per_cohort.items()))
    _print_table("MSE by rating", [(str(k), v) for k, v in report.per_rating.items()])
    for line in report.lines():
        print(line)
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["group", "key", "mse"])
            writer.writerows(("cohort", k, f"{v:.6f}") for k, v in report.per_cohort.items())
            writer.writerows(("rating", k, f"{v:.6f}") for k, v in report.per_rating.items())


def _lookup(ids, raw, kind):
    try:
        return ids.index(raw)
    except ValueError:
        raise ContractError(f"unknown {kind} id {raw!r}") from None


def cmd_predict(args):
    ckpt = load_checkpoint(args.ckpt)
    if "cache.e" not in ckpt.tensors:
        raise ContractError("checkpoint carries no cached embeddings; retrain to produce one")
    model = model_from_checkpoint(ckpt)
    users = ckpt.meta.get("user_ids", "").split("\t")
    items = ckpt.meta.get("item_ids", "").split("\t")
    u = _lookup(users, args.user, "user")
    v = _lookup(items, args.item, "item")
    e = ckpt.tensors["cache.e"]
    pred = decode(e[u], e[model.n_users + v], model.decoders, model.categories)
    for r, p in zip(model.categories, pred.prob[0]):
        print(f"p({r})={p:.6f}")
    print(f"expected={float(pred.expected_rating[0]):.6f}")


def build_parser():
    parser = argparse.ArgumentParser(prog="mhcl", description="Multi-channel hypergraph rating model")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest a rating file, split it and write remap tables")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", default="ml-100k")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train on a prepared directory and write the best checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=("completion", "recommendation"), default="completion")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report-longtail", help="test MSE per user cohort and per rating")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_report_longtail)

    p = sub.add_parser("predict", help="rating distribution for one raw (user, item) pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--item", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    np.seterr(all="ignore")
    try:
        args.func(args)
    except MHCLError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
