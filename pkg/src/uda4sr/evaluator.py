"""Full-ranking evaluation: Recall@k / NDCG@k, popularity baseline, report tables."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .corpus import SplitCorpus
from .interest import InterestModel, pad_sequences


@dataclass
class EvalEvent:
    user_index: int
    history: list[int]  # model input, most recent t_max items before the target
    target: int
    seen: frozenset[int]  # every item strictly before the target, for exclusion


@dataclass
class MetricReport:
    recall: dict[int, float]
    ndcg: dict[int, float]
    n_events: int
    config_tag: str

    def validate(self) -> "MetricReport":
        """Range and k-monotonicity checks; applied to every computed report.

        Literal rows copied from external tables skip this (published numbers
        are not always k-monotone).
        """
        ks = sorted(self.recall)
        for table in (self.recall, self.ndcg):
            for k in ks:
                if not 0.0 <= table[k] <= 1.0:
                    raise ValueError(f"metric out of [0,1]: {table[k]} at k={k}")
            for lo, hi in zip(ks, ks[1:]):
                if table[hi] < table[lo] - 1e-12:
                    raise ValueError(f"metric not monotone in k: {table[lo]} > {table[hi]}")
        return self

    def as_dict(self) -> dict:
        return {
            "config_tag": self.config_tag,
            "n_events": self.n_events,
            "recall": {str(k): v for k, v in self.recall.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            recall={int(k): v for k, v in d["recall"].items()},
            ndcg={int(k): v for k, v in d["ndcg"].items()},
            n_events=d["n_events"],
            config_tag=d["config_tag"],
        )


def make_events(corpus: SplitCorpus, split: str, t_max: int = 50) -> list[EvalEvent]:
    """One event per item in the chosen region per user, with rolling history."""
    if split not in ("valid", "test"):
        raise ValueError(f"split must be valid or test, got {split!r}")
    events: list[EvalEvent] = []
    for seq in corpus.sequences:
        if seq.synthetic:
            continue
        lo = seq.train_end if split == "valid" else seq.valid_end
        hi = seq.valid_end if split == "valid" else len(seq.items)
        for pos in range(lo, hi):
            prior = seq.items[:pos]
            events.append(
                EvalEvent(
                    user_index=seq.user_index,
                    history=prior[-t_max:],
                    target=seq.items[pos],
                    seen=frozenset(prior),
                )
            )
    return events


def full_rank(event: EvalEvent, scores: np.ndarray) -> int:
    """Pessimistic full-catalog rank of the target.

    scores: per-item score vector of length V+1 (index 0 ignored).  Candidates
    are all items except the user's previously seen ones; the target itself is
    never excluded.  Tied candidates count as ranked higher.
    """
    v = scores.shape[0] - 1
    mask = np.ones(v + 1, dtype=bool)
    mask[0] = False
    excluded = np.fromiter((i for i in event.seen if i != event.target), dtype=np.int64)
    if excluded.size:
        mask[excluded] = False
    mask[event.target] = False
    return 1 + int((scores[mask] >= scores[event.target]).sum())


def recall_at_k(ranks, k: int) -> float:
    ranks = np.asarray(ranks)
    return float((ranks <= k).mean())


def ndcg_at_k(ranks, k: int) -> float:
    """Single-relevant-item NDCG: 1/log2(rank+1) inside the cut, else 0."""
    ranks = np.asarray(ranks, dtype=np.float64)
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(gains.mean())


def report_from_ranks(ranks, config_tag: str, ks=(10, 20)) -> MetricReport:
    return MetricReport(
        recall={k: recall_at_k(ranks, k) for k in ks},
        ndcg={k: ndcg_at_k(ranks, k) for k in ks},
        n_events=len(ranks),
        config_tag=config_tag,
    ).validate()


def evaluate_events(events, score_fn, config_tag: str, ks=(10, 20)) -> MetricReport:
    """Rank every event with score_fn(event) -> per-item scores and aggregate."""
    ranks = [full_rank(e, score_fn(e)) for e in events]
    return report_from_ranks(ranks, config_tag, ks)


class PopularityRanker:
    """Ranks by training-region frequency descending, ties by item index ascending."""

    def __init__(self, corpus: SplitCorpus):
        freq = corpus.item_freq.astype(np.float64)
        v = corpus.vocab.size
        # composite score makes the (freq desc, index asc) order total
        self.scores_vec = freq * (v + 2) + (v + 1 - np.arange(v + 1))
        self.scores_vec[0] = -np.inf

    def scores(self, event: EvalEvent) -> np.ndarray:
        return self.scores_vec


def popularity_baseline(corpus: SplitCorpus) -> PopularityRanker:
    return PopularityRanker(corpus)


def model_ranks(
    model: InterestModel, events: list[EvalEvent], batch_size: int = 256
) -> list[int]:
    """Batched full-ranking of events under the trained model."""
    model.eval()
    ranks: list[int] = []
    with torch.no_grad():
        for start in range(0, len(events), batch_size):
            chunk = events[start : start + batch_size]
            prefixes = pad_sequences([e.history for e in chunk])
            H = model.encode(prefixes)
            U, _ = model.route(H, prefixes != 0)
            logits = model.score_all_items(U).numpy()
            for row, event in zip(logits, chunk):
                ranks.append(full_rank(event, row))
    return ranks


def evaluate_model(
    corpus: SplitCorpus,
    model: InterestModel,
    split: str,
    config_tag: str = "",
    ks=(10, 20),
    batch_size: int = 256,
) -> MetricReport:
    events = make_events(corpus, split, model.cfg.t_max)
    ranks = model_ranks(model, events, batch_size)
    return report_from_ranks(ranks, config_tag, ks)


def write_report(reports: list[MetricReport], path: str | Path) -> None:
    """Table-style CSV (config,R@10,N@10,R@20,N@20; 4 decimals) plus a JSON mirror."""
    if not reports:
        raise ValueError("need at least one report")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "R@10", "N@10", "R@20", "N@20"])
        for rep in reports:
            writer.writerow(
                [rep.config_tag]
                + [f"{x:.4f}" for x in (rep.recall[10], rep.ndcg[10], rep.recall[20], rep.ndcg[20])]
            )
    path.with_suffix(".json").write_text(
        json.dumps([rep.as_dict() for rep in reports], indent=2), encoding="utf-8"
    )


def read_report_csv(path: str | Path) -> list[dict]:
    """Parse the report CSV back into row dicts with float metric values."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {
            "config": r["config"],
            "R@10": float(r["R@10"]),
            "N@10": float(r["N@10"]),
            "R@20": float(r["R@20"]),
            "N@20": float(r["N@20"]),
        }
        for r in rows
    ]
