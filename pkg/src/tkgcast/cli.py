"""Command line entry points.

Subcommands cover the lifecycle: ingest a corpus, train a model, evaluate
ranking quality, answer one forecast query with an exported explanation,
and benchmark the segment kernels. Machine-readable output (JSON or TSV)
goes to stdout; figures are written next to the delimited files.
"""

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import config as confmod
from . import figures
from .embeddings import ModelDims, ParameterSet, load_checkpoint, save_checkpoint
from .engine import Query, forecast
from .evaluation import FILTER_MODES, FilterIndex, evaluate_queries
from .explain import ExplanationError, build_explanation, to_dot, verify_explanation
from .kgstore import (Dataset, IngestError, TemporalAdjacency,
                      _parse_timestamp, augment_reciprocal, load_corpus)
from .sampling import query_rng
from .segments import run_benchmark
from .training import EVAL_EPOCH, fit


class CLIError(Exception):
    """User-facing command error; the message is printed to stderr."""


def _load_augmented(conf, data_dir):
    directory = data_dir or conf["data.dir"]
    splits = load_corpus(directory, time_unit=confmod.get_int(conf, "data.time_unit"))
    return {k: augment_reciprocal(v) for k, v in splits.items()}


def _union(aug):
    first = aug["train"]
    quads = np.concatenate([aug[k].quads for k in ("train", "valid", "test")], axis=0)
    return Dataset(quads, first.entities, first.predicates, split="all",
                   augmented=True, n_base_predicates=first.n_base_predicates,
                   time_granularity=first.time_granularity, epoch=first.epoch)


def _out_dir(args, conf):
    path = args.out or conf["output.dir"]
    os.makedirs(path, exist_ok=True)
    return path


def _resolve(vocab, text, kind):
    if text in vocab:
        return vocab.get(text)
    try:
        idx = int(text)
    except ValueError:
        idx = -1
    if 0 <= idx < len(vocab):
        return idx
    raise CLIError(f"unknown {kind} {text!r}")


def _parse_time(text, ds):
    """Integer timestamps are internal indices; ISO dates use the corpus epoch."""
    try:
        return int(text)
    except ValueError:
        return _parse_timestamp(text, ds.epoch, 1, "--time")


def _check_dims(params, ds):
    d = params.dims
    if d.n_entities != len(ds.entities) or d.n_predicates != len(ds.predicates):
        raise CLIError(
            f"checkpoint expects {d.n_entities} entities / {d.n_predicates} "
            f"predicates, corpus has {len(ds.entities)} / {len(ds.predicates)}"
        )


def _align_steps(hyper, params):
    if hyper.steps != params.steps:
        print(f"tkgcast: checkpoint was trained with {params.steps} steps; "
              f"overriding configured {hyper.steps}", file=sys.stderr)
        return dataclasses.replace(hyper, steps=params.steps)
    return hyper


def _load_params(args, conf, aug):
    """Checkpoint parameters, or a fresh initialization when none is given."""
    if args.checkpoint:
        params, _ = load_checkpoint(args.checkpoint)
        _check_dims(params, aug["train"])
        return params
    print("tkgcast: no checkpoint given; using untrained parameters",
          file=sys.stderr)
    hyper = confmod.hyperparams(conf)
    dims = ModelDims(len(aug["train"].entities), len(aug["train"].predicates),
                     confmod.get_int(conf, "model.static_dim"),
                     confmod.get_int(conf, "model.time_dim"))
    t_max = int(_union(aug).quads[:, 3].max())
    return ParameterSet.init(dims, hyper.steps, t_max,
                             seed=confmod.get_int(conf, "train.seed"))


def cmd_ingest(args, conf):
    t0 = time.perf_counter()
    directory = args.data or conf["data.dir"]
    splits = load_corpus(directory, time_unit=confmod.get_int(conf, "data.time_unit"))
    aug = {k: augment_reciprocal(v) for k, v in splits.items()}
    elapsed = time.perf_counter() - t0
    train = aug["train"]
    out = _out_dir(args, conf)
    ent_path = os.path.join(out, "entities.tsv")
    pred_path = os.path.join(out, "predicates.tsv")
    train.entities.save_tsv(ent_path)
    train.predicates.save_tsv(pred_path)
    all_ts = np.concatenate([s.quads[:, 3] for s in splits.values()])
    summary = {
        "splits": {k: len(v) for k, v in splits.items()},
        "augmented_splits": {k: len(v) for k, v in aug.items()},
        "entities": len(train.entities),
        "base_predicates": train.n_base_predicates,
        "augmented_predicates": len(train.predicates),
        "timestamps": int(np.unique(all_ts).size),
        "time_granularity": train.time_granularity,
        "epoch": None if train.epoch is None else train.epoch.isoformat(),
        "seconds": round(elapsed, 3),
        "vocab_files": [ent_path, pred_path],
    }
    print(json.dumps(summary, indent=2))
    return 0


def cmd_train(args, conf):
    aug = _load_augmented(conf, args.data)
    train, valid = aug["train"], aug["valid"]
    if not len(train):
        raise CLIError("training split is empty")
    hyper = confmod.hyperparams(conf)
    sampling = confmod.sampling_config(conf, seed_override=args.seed)
    tconf = confmod.training_config(conf, seed_override=args.seed)
    if args.epochs is not None:
        tconf = dataclasses.replace(tconf, epochs=args.epochs)
    dims = ModelDims(len(train.entities), len(train.predicates),
                     confmod.get_int(conf, "model.static_dim"),
                     confmod.get_int(conf, "model.time_dim"))
    t_max = int(_union(aug).quads[:, 3].max())
    params = ParameterSet.init(dims, hyper.steps, t_max, seed=tconf.seed)
    train_adj = TemporalAdjacency.from_dataset(train)
    valid_adj = TemporalAdjacency.from_datasets([train, valid])
    valid_quads = valid.quads
    if args.valid_limit and args.valid_limit < valid_quads.shape[0]:
        valid_quads = valid_quads[:args.valid_limit]

    def log(epoch, loss, mrr, hits1):
        print(f"epoch {epoch}: loss={loss:.4f} valid_mrr={mrr:.4f} "
              f"hits@1={hits1:.4f}", file=sys.stderr)

    result = fit(params, train.quads, valid_quads, train_adj, valid_adj,
                 hyper, sampling, tconf, len(train.predicates), log=log)
    out = _out_dir(args, conf)
    ckpt = os.path.join(out, "model.npz")
    save_checkpoint(params, ckpt, extra={"config": dict(conf)})
    metrics_path = os.path.join(out, "training.tsv")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write("epoch\tloss\tvalid_mrr\n")
        for i, (loss, mrr) in enumerate(zip(result.epoch_loss, result.valid_mrr)):
            fh.write(f"{i}\t{loss:.6f}\t{mrr:.6f}\n")
    curves_path = os.path.join(out, "training.png")
    figures.render_training_curves(result, curves_path)
    print(json.dumps({
        "epochs_run": result.epochs_run,
        "best_epoch": result.best_epoch,
        "best_valid_mrr": result.best_valid_mrr,
        "final_epoch_loss": result.epoch_loss[-1] if result.epoch_loss else None,
        "aborted": result.aborted,
        "checkpoint": ckpt,
        "metrics": metrics_path,
        "curves": curves_path,
    }, indent=2))
    return 0


def cmd_evaluate(args, conf):
    aug = _load_augmented(conf, args.data)
    params, _ = load_checkpoint(args.checkpoint)
    _check_dims(params, aug["train"])
    hyper = _align_steps(confmod.hyperparams(conf), params)
    sampling = confmod.sampling_config(conf, seed_override=args.seed)
    union = _union(aug)
    adjacency = TemporalAdjacency.from_dataset(union)
    filter_index = FilterIndex(union.quads)
    mode = args.filter or conf["eval.filter"]
    if mode not in FILTER_MODES:
        raise CLIError(f"unknown filter mode {mode!r} (choose from {FILTER_MODES})")
    if args.ks:
        conf = dict(conf, **{"eval.ks": args.ks})
    ks = tuple(confmod.get_int_list(conf, "eval.ks"))
    quads = aug[args.split].quads
    if args.limit and args.limit < quads.shape[0]:
        quads = quads[:args.limit]
    live = params.arrays
    n_predicates = len(union.predicates)

    def score(i, s, p, t):
        rng = query_rng(sampling.seed, i, epoch=EVAL_EPOCH)
        res = forecast(adjacency, live, Query(s, p, t), hyper, sampling, rng,
                       n_predicates)
        return res.score_map()

    m, records = evaluate_queries(quads, score, len(union.entities),
                                  filter_index, mode=mode, ks=ks)
    out = _out_dir(args, conf)
    ranks_path = os.path.join(out, "ranks.tsv")
    with open(ranks_path, "w", encoding="utf-8") as fh:
        fh.write("subject\tpredicate\tanswer\ttimestamp\trank\n")
        for r in records:
            fh.write(f"{union.entities.name(r.subject)}\t"
                     f"{union.predicates.name(r.predicate)}\t"
                     f"{union.entities.name(r.answer)}\t{r.timestamp}\t{r.rank}\n")
    hist_path = os.path.join(out, "ranks.png")
    figures.render_rank_histogram([r.rank for r in records], hist_path,
                                  title=f"{args.split} ranks ({mode})")
    print(json.dumps({
        "split": args.split,
        "filter": mode,
        "queries": len(records),
        "mrr": m["mrr"],
        "hits": {str(k): v for k, v in m["hits"].items()},
        "ranks": ranks_path,
        "histogram": hist_path,
    }, indent=2))
    return 0


def _run_query(args, conf):
    aug = _load_augmented(conf, args.data)
    union = _union(aug)
    params = _load_params(args, conf, aug)
    hyper = _align_steps(confmod.hyperparams(conf), params)
    sampling = confmod.sampling_config(conf, seed_override=args.seed)
    s = _resolve(union.entities, args.subject, "entity")
    p = _resolve(union.predicates, args.predicate, "predicate")
    t = _parse_time(args.time, union)
    adjacency = TemporalAdjacency.from_dataset(union)
    rng = query_rng(sampling.seed, 0, epoch=EVAL_EPOCH)
    result = forecast(adjacency, params.arrays, Query(s, p, t), hyper,
                      sampling, rng, len(union.predicates), with_trace=True,
                      seen_entities=params.seen_entities)
    snapshot = {k: conf[k] for k in conf if k.startswith(("model.", "sampling."))}
    doc = build_explanation(result, union.entities, union.predicates,
                            fingerprint=params.fingerprint(),
                            config_snapshot=snapshot)
    verify_explanation(doc, union)
    out = _out_dir(args, conf)
    paths = {
        "explanation": os.path.join(out, "explanation.json"),
        "dot": os.path.join(out, "explanation.dot"),
        "figure": os.path.join(out, "explanation.png"),
    }
    with open(paths["explanation"], "w", encoding="utf-8") as fh:
        fh.write(doc.to_json() + "\n")
    with open(paths["dot"], "w", encoding="utf-8") as fh:
        fh.write(to_dot(doc))
    figures.render_explanation(doc, paths["figure"])
    if result.unseen_entities:
        names = ", ".join(sorted(union.entities.name(e)
                                 for e in result.unseen_entities))
        print(f"tkgcast: entities never seen in training: {names}",
              file=sys.stderr)
    return result, doc, union, paths


def cmd_forecast(args, conf):
    result, doc, union, paths = _run_query(args, conf)
    top = result.ranked[:args.top]
    if not top:
        print("tkgcast: no prior facts reachable from the query subject; "
              "no candidates to rank", file=sys.stderr)
    for rank, (entity, score) in enumerate(top, start=1):
        print(f"{rank}\t{union.entities.name(entity)}\t{score:.6g}")
    print(f"tkgcast: explanation written to {paths['explanation']}, "
          f"{paths['dot']}, {paths['figure']}", file=sys.stderr)
    return 0


def cmd_explain(args, conf):
    _, doc, _, paths = _run_query(args, conf)
    print(doc.to_json())
    print(f"tkgcast: wrote {paths['explanation']}, {paths['dot']}, "
          f"{paths['figure']}", file=sys.stderr)
    return 0


def cmd_bench(args, conf):
    report = run_benchmark(args.size, args.segments, iters=args.iters,
                           seed=args.seed or 0)
    print(json.dumps(report, indent=2))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report_path = os.path.join(args.out, "benchmark.json")
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
        figures.render_benchmark(report, os.path.join(args.out, "benchmark.png"))
    return 0


def _add_common(sub):
    sub.add_argument("--data", help="corpus directory (default: config data.dir)")
    sub.add_argument("--out", help="output directory (default: config output.dir)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tkgcast",
        description="explainable link forecasting on temporal knowledge graphs")
    parser.add_argument("--config", help="key = value file overriding defaults")
    parser.add_argument("--seed", type=int,
                        help="override sampling and training seeds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a corpus and write vocabularies")
    _add_common(p)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("train", help="fit model parameters on the train split")
    _add_common(p)
    p.add_argument("--epochs", type=int, help="override config train.epochs")
    p.add_argument("--valid-limit", type=int, default=0,
                   help="cap per-epoch validation queries (0 = all)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="rank held-out queries with a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="model .npz file")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--filter", choices=FILTER_MODES,
                   help="override config eval.filter")
    p.add_argument("--ks", help="comma-separated Hits@k cutoffs, e.g. 1,3,10")
    p.add_argument("--limit", type=int, default=0,
                   help="evaluate only the first N queries (0 = all)")
    p.set_defaults(handler=cmd_evaluate)

    for name, handler in (("forecast", cmd_forecast), ("explain", cmd_explain)):
        p = sub.add_parser(
            name,
            help="answer one query" if name == "forecast"
            else "print the explanation document for one query")
        _add_common(p)
        p.add_argument("--checkpoint", help="model .npz file (optional)")
        p.add_argument("--subject", required=True, help="entity name or id")
        p.add_argument("--predicate", required=True, help="predicate name or id")
        p.add_argument("--time", required=True,
                       help="query timestamp: integer index or ISO date")
        if name == "forecast":
            p.add_argument("--top", type=int, default=10,
                           help="number of predictions to print")
        p.set_defaults(handler=handler)

    p = sub.add_parser("bench-segments",
                       help="time the segment kernels against a naive loop")
    p.add_argument("--size", type=int, default=100_000)
    p.add_argument("--segments", type=int, default=1000)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--out", help="also write benchmark.json and benchmark.png")
    p.set_defaults(handler=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        conf = confmod.parse_config(args.config)
        return args.handler(args, conf)
    except (CLIError, confmod.ConfigError, IngestError, ExplanationError,
            ValueError, OSError) as err:
        print(f"tkgcast: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
