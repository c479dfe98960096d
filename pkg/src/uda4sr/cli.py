"""Pipeline CLI: preprocess -> build-graph -> augment -> train -> evaluate -> report.

Stages communicate through on-disk artifacts in the workdir (corpus.json,
gig.txt, synthetic.json, checkpoint_<tag>.pt, metrics_<tag>_<split>.json,
report.csv).  A single global seed drives every rng stream; a lock file
serializes writers per workdir.  Exit codes: 0 ok, 1 usage, 2 missing
artifact, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import torch
from filelock import FileLock, Timeout

from . import checkpoint as ckpt
from . import corpus as corpus_mod
from . import evaluator, gan, gig, trainer
from .config import ConfigError, RunConfig, config_hash, load_config
from .seeding import derive_seed, stream_rng

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


class MissingArtifact(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _artifact(workdir: Path, name: str, hint: str) -> Path:
    path = workdir / name
    if not path.exists():
        raise MissingArtifact(f"{path} not found; {hint}")
    return path


def _load_synthetic(path: Path) -> list[gan.SyntheticSequence]:
    syn_corpus = corpus_mod.load_corpus(path)
    return [gan.SyntheticSequence(items=s.items, origin_user=s.user) for s in syn_corpus.sequences]


def _train_tag(no_gcl: bool, no_gan: bool) -> str:
    if no_gcl and no_gan:
        return "ablation_base"
    if no_gcl:
        return "no_gcl"
    if no_gan:
        return "no_gan"
    return "full"


def cmd_preprocess(cfg: RunConfig, workdir: Path, min_count: int) -> int:
    if cfg.data is None:
        raise UsageError("no data path; set [paths] data in the config")
    if not Path(cfg.data).exists():
        raise MissingArtifact(f"data file not found: {cfg.data}")
    rows = corpus_mod.load_interactions(cfg.data)
    rows = corpus_mod.filter_min_support(rows, min_count)
    sequences, vocab = corpus_mod.build_sequences(rows, cfg.model.t_max)
    corpus = corpus_mod.split_temporal(sequences, vocab)
    corpus_mod.save_corpus(corpus, workdir / "corpus.json")
    stats = corpus_mod.corpus_stats(corpus)
    (workdir / "corpus_stats.json").write_text(json.dumps(stats, indent=2), encoding="utf-8")
    print(f"preprocess: {stats['users']} users, {stats['items']} items, "
          f"{stats['events']} events, {stats['dropped_count']} dropped")
    return EXIT_OK


def cmd_build_graph(cfg: RunConfig, workdir: Path, augment_graph: bool,
                    epsilon: float | None, order: int | None) -> int:
    corpus = corpus_mod.load_corpus(
        _artifact(workdir, "corpus.json", "run `uda4sr preprocess` first")
    )
    extra = None
    if augment_graph:
        syn_path = workdir / "synthetic.json"
        if syn_path.exists():
            extra = corpus_mod.load_corpus(syn_path).sequences
        else:
            print("build-graph: no synthetic.json, building from real sequences only")
    n = order if order is not None else cfg.graph.order_n
    graph = gig.build_pruned_gig(corpus, cfg.graph, extra_sequences=extra,
                                 epsilon=epsilon, order_n=order)
    gig.save_graph(graph, workdir / "gig.txt", n)
    print(f"build-graph: n={n} V={corpus.vocab.size} edges={graph.num_edges()}")
    return EXIT_OK


def cmd_augment(cfg: RunConfig, workdir: Path) -> int:
    corpus = corpus_mod.load_corpus(
        _artifact(workdir, "corpus.json", "run `uda4sr preprocess` first")
    )
    # the generator reads the same initial embedding table the trainer will build
    emb = trainer.build_model(corpus.vocab.size, cfg.model, cfg.seed).item_emb.weight.detach()
    torch.manual_seed(derive_seed(cfg.seed, "init/gan"))
    generator, _, curves = gan.train_gan(corpus, emb, cfg.model.d, cfg.gan,
                                         stream_rng(cfg.seed, "gan/train"))
    synthetic = gan.synthesize(corpus, generator, emb, cfg.gan,
                               stream_rng(cfg.seed, "gan/synthesize"))
    syn_sequences = [
        corpus_mod.UserSequence(s.origin_user, i, s.items,
                                len(s.items), len(s.items), synthetic=True)
        for i, s in enumerate(synthetic)
    ]
    syn_corpus = corpus_mod.SplitCorpus(syn_sequences, corpus.vocab, corpus.item_freq, 0)
    corpus_mod.save_corpus(syn_corpus, workdir / "synthetic.json")
    (workdir / "gan_history.json").write_text(json.dumps(curves), encoding="utf-8")
    print(f"augment: {len(synthetic)} synthetic sequences")
    return EXIT_OK


def cmd_train(cfg: RunConfig, workdir: Path, no_gcl: bool, no_gan: bool) -> int:
    corpus = corpus_mod.load_corpus(
        _artifact(workdir, "corpus.json", "run `uda4sr preprocess` first")
    )
    graph, _ = gig.load_graph(
        _artifact(workdir, "gig.txt", "run `uda4sr build-graph` first")
    )
    synthetic: list[gan.SyntheticSequence] = []
    if not no_gan:
        synthetic = _load_synthetic(
            _artifact(workdir, "synthetic.json",
                      "run `uda4sr augment` first, or pass --no-gan")
        )
    train_cfg = dataclasses.replace(cfg.train, lambda_cl=0.0) if no_gcl else cfg.train
    tag = _train_tag(no_gcl, no_gan)
    model, gnn, history = trainer.train(
        corpus, graph, synthetic, cfg.model, train_cfg, cfg.graph, tau=cfg.contrast.tau
    )
    best_epoch = 0
    if history:
        best_epoch = max(history, key=lambda row: row["val_ndcg10"])["epoch"]
    ckpt.save_checkpoint(workdir / f"checkpoint_{tag}.pt", model, gnn, best_epoch,
                         config_hash(cfg))
    (workdir / f"history_{tag}.json").write_text(json.dumps(history), encoding="utf-8")
    last = history[-1] if history else {"val_ndcg10": float("nan")}
    print(f"train[{tag}]: best epoch {best_epoch}, "
          f"final val NDCG@10 {last['val_ndcg10']:.4f}" if history
          else f"train[{tag}]: 0 epochs (initialized checkpoint)")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, workdir: Path, split: str, tag: str, baseline: bool) -> int:
    corpus = corpus_mod.load_corpus(
        _artifact(workdir, "corpus.json", "run `uda4sr preprocess` first")
    )
    if baseline:
        ranker = evaluator.popularity_baseline(corpus)
        events = evaluator.make_events(corpus, split, cfg.model.t_max)
        report = evaluator.evaluate_events(events, ranker.scores, f"popularity:{split}")
        out_tag = "popularity"
    else:
        model, _, _ = ckpt.load_checkpoint(
            _artifact(workdir, f"checkpoint_{tag}.pt", "run `uda4sr train` first")
        )
        report = evaluator.evaluate_model(corpus, model, split, f"{tag}:{split}")
        out_tag = tag
    out = workdir / f"metrics_{out_tag}_{split}.json"
    out.write_text(json.dumps(report.as_dict(), indent=2), encoding="utf-8")
    print(f"evaluate[{report.config_tag}]: R@10={report.recall[10]:.4f} "
          f"N@10={report.ndcg[10]:.4f} R@20={report.recall[20]:.4f} "
          f"N@20={report.ndcg[20]:.4f} ({report.n_events} events)")
    return EXIT_OK


def cmd_report(workdir: Path) -> int:
    metric_files = sorted(workdir.glob("metrics_*.json"))
    if not metric_files:
        raise MissingArtifact(f"no metrics_*.json in {workdir}; run `uda4sr evaluate` first")
    reports = [
        evaluator.MetricReport.from_dict(json.loads(p.read_text(encoding="utf-8")))
        for p in metric_files
    ]
    evaluator.write_report(reports, workdir / "report.csv")
    print(f"report: {len(reports)} rows -> {workdir / 'report.csv'}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="uda4sr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="global seed override")
        p.add_argument("--workdir", default=None, help="artifact directory "
                       "(default: $UDA4SR_WORKDIR or [paths] workdir)")

    p = sub.add_parser("preprocess", help="parse, filter, and split the interaction log")
    common(p)
    p.add_argument("--min-count", type=int, default=15,
                   help="minimum interactions per user and per item")

    p = sub.add_parser("build-graph", help="construct the pruned item graph")
    common(p)
    p.add_argument("--augment-graph", action="store_true",
                   help="include synthetic sequences in graph construction")
    p.add_argument("--epsilon", type=float, default=None, help="edge-weight threshold override")
    p.add_argument("--order", type=int, default=None, help="co-occurrence interval cap override")

    p = sub.add_parser("augment", help="train the GAN and synthesize sequences")
    common(p)

    p = sub.add_parser("train", help="train the recommendation model")
    common(p)
    p.add_argument("--no-gcl", action="store_true", help="drop the contrastive task")
    p.add_argument("--no-gan", action="store_true", help="train without synthetic data")

    p = sub.add_parser("evaluate", help="full-ranking metrics for one split")
    common(p)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--tag", default="full", help="checkpoint tag to evaluate")
    p.add_argument("--baseline", action="store_true", help="evaluate the popularity baseline")

    p = sub.add_parser("report", help="aggregate metrics into the comparison table")
    common(p)
    return parser


def _resolve_workdir(args, cfg: RunConfig) -> Path:
    if args.workdir:
        return Path(args.workdir)
    env = os.environ.get("UDA4SR_WORKDIR")
    if env:
        return Path(env)
    if cfg.workdir is not None:
        return cfg.workdir
    raise UsageError("no workdir; pass --workdir, set UDA4SR_WORKDIR, or set [paths] workdir")


def main(argv=None) -> int:
    torch.set_num_threads(1)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.train.seed = args.seed
        workdir = _resolve_workdir(args, cfg)
        workdir.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(workdir / ".lock"))
        try:
            lock.acquire(timeout=0)
        except Timeout:
            print(f"error: workdir {workdir} is locked by another run", file=sys.stderr)
            return EXIT_RUNTIME
        try:
            if args.command == "preprocess":
                return cmd_preprocess(cfg, workdir, args.min_count)
            if args.command == "build-graph":
                return cmd_build_graph(cfg, workdir, args.augment_graph, args.epsilon, args.order)
            if args.command == "augment":
                return cmd_augment(cfg, workdir)
            if args.command == "train":
                return cmd_train(cfg, workdir, args.no_gcl, args.no_gan)
            if args.command == "evaluate":
                return cmd_evaluate(cfg, workdir, args.split, args.tag, args.baseline)
            if args.command == "report":
                return cmd_report(workdir)
            raise UsageError(f"unknown command {args.command}")
        finally:
            lock.release()
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingArtifact, FileNotFoundError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # surfaced with context, nonzero exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
