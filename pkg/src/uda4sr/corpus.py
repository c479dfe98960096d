"""Interaction-log ingestion: parse, filter, encode, and split user sequences."""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TSV_HEADER = ("user_id", "item_id", "timestamp")


class MalformedLine(ValueError):
    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {reason}")


class EmptyAfterFilter(ValueError):
    pass


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    timestamp: int


@dataclass
class Vocab:
    """Dense item indexing; index 0 is reserved for padding and maps to no item."""

    item_to_index: dict[str, int]
    index_to_item: list[str | None]

    @property
    def size(self) -> int:
        """Number of real items V (padding excluded)."""
        return len(self.index_to_item) - 1

    @classmethod
    def from_items(cls, items) -> "Vocab":
        ordered = sorted(set(items))
        item_to_index = {it: i + 1 for i, it in enumerate(ordered)}
        return cls(item_to_index, [None] + ordered)


@dataclass
class UserSequence:
    user: str
    user_index: int
    items: list[int]
    train_end: int | None = None
    valid_end: int | None = None
    synthetic: bool = False

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class SplitCorpus:
    sequences: list[UserSequence]
    vocab: Vocab
    item_freq: np.ndarray  # train-region counts, shape (V+1,), index 0 unused
    dropped_count: int = 0


def load_interactions(path: str | Path, fmt: str = "tsv") -> list[Interaction]:
    """Parse a UTF-8 TSV log (optional `user_id\\titem_id\\ttimestamp` header).

    Raises MalformedLine with the 1-based file line number on wrong arity or
    a non-integer timestamp.
    """
    if fmt != "tsv":
        raise ValueError(f"unsupported format: {fmt}")
    path = Path(path)
    rows: list[Interaction] = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if line_no == 1 and fields[0] == TSV_HEADER[0]:
                continue
            if len(fields) != 3:
                raise MalformedLine(line_no, f"expected 3 tab-separated fields, got {len(fields)}")
            user, item, ts = fields
            if not user or not item:
                raise MalformedLine(line_no, "empty user or item id")
            try:
                timestamp = int(ts)
            except ValueError:
                raise MalformedLine(line_no, f"non-integer timestamp {ts!r}") from None
            if timestamp < 0:
                raise MalformedLine(line_no, f"negative timestamp {timestamp}")
            rows.append(Interaction(user, item, timestamp))
    return rows


def filter_min_support(interactions: list[Interaction], min_count: int = 15) -> list[Interaction]:
    """Drop users and items with fewer than `min_count` events, iterating to a fixpoint.

    Each removal pass can re-violate the other constraint, so passes repeat until
    every surviving user and item has >= min_count events.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    rows = list(interactions)
    while True:
        user_counts = Counter(r.user for r in rows)
        item_counts = Counter(r.item for r in rows)
        kept = [
            r for r in rows
            if user_counts[r.user] >= min_count and item_counts[r.item] >= min_count
        ]
        if len(kept) == len(rows):
            break
        rows = kept
    if not rows:
        raise EmptyAfterFilter(f"no interactions survive min_count={min_count}")
    return rows


def build_sequences(
    interactions: list[Interaction], t_max: int = 50
) -> tuple[list[UserSequence], Vocab]:
    """Per-user time-ordered item-index sequences, keeping the most recent t_max.

    Timestamp ties keep input file order (stable sort).  Repeated items are kept.
    """
    per_user: dict[str, list[Interaction]] = defaultdict(list)
    for r in interactions:
        per_user[r.user].append(r)
    truncated: dict[str, list[str]] = {}
    for user in per_user:
        events = sorted(per_user[user], key=lambda r: r.timestamp)
        items = [r.item for r in events]
        if len(items) > t_max:
            items = items[-t_max:]
        truncated[user] = items
    vocab = Vocab.from_items(it for items in truncated.values() for it in items)
    sequences = [
        UserSequence(user, u_idx, [vocab.item_to_index[it] for it in truncated[user]])
        for u_idx, user in enumerate(sorted(truncated))
    ]
    return sequences, vocab


def split_positions(length: int, ratios: tuple[float, float, float]) -> tuple[int, int]:
    """Positional (train_end, valid_end) cut indices for one sequence.

    train_end = max(1, floor(r1*L)); valid_end = max(train_end+1, floor((r1+r2)*L));
    then both are pulled back just enough to keep the test region non-empty.
    Non-empty regions are guaranteed for L >= 5.
    """
    r1, r2, _ = ratios
    train_end = max(1, int(np.floor(r1 * length)))
    valid_end = max(train_end + 1, int(np.floor((r1 + r2) * length)))
    valid_end = min(valid_end, length - 1)
    train_end = max(1, min(train_end, valid_end - 1))
    return train_end, valid_end


def split_temporal(
    sequences: list[UserSequence],
    vocab: Vocab,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> SplitCorpus:
    """Mark per-sequence train/valid/test regions; sequences shorter than 5 are dropped."""
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be positive and sum to 1, got {ratios}")
    kept: list[UserSequence] = []
    dropped = 0
    for seq in sequences:
        if len(seq) < 5:
            dropped += 1
            continue
        train_end, valid_end = split_positions(len(seq), ratios)
        kept.append(
            UserSequence(seq.user, len(kept), list(seq.items), train_end, valid_end)
        )
    item_freq = np.zeros(vocab.size + 1, dtype=np.int64)
    for seq in kept:
        for it in seq.items[: seq.train_end]:
            item_freq[it] += 1
    return SplitCorpus(kept, vocab, item_freq, dropped)


def user_item_sets(corpus: SplitCorpus) -> list[set[int]]:
    """Full interaction set per user (all split regions), indexed by user_index."""
    return [set(seq.items) for seq in corpus.sequences]


def save_corpus(corpus: SplitCorpus, path: str | Path) -> None:
    payload = {
        "vocab": corpus.vocab.index_to_item,
        "sequences": [
            {
                "user": seq.user,
                "items": seq.items,
                "train_end": seq.train_end,
                "valid_end": seq.valid_end,
                **({"synthetic": True} if seq.synthetic else {}),
            }
            for seq in corpus.sequences
        ],
        "dropped_count": corpus.dropped_count,
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_corpus(path: str | Path) -> SplitCorpus:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    index_to_item = payload["vocab"]
    vocab = Vocab(
        {it: i for i, it in enumerate(index_to_item) if i > 0},
        index_to_item,
    )
    sequences = [
        UserSequence(
            rec["user"],
            idx,
            list(rec["items"]),
            rec["train_end"],
            rec["valid_end"],
            rec.get("synthetic", False),
        )
        for idx, rec in enumerate(payload["sequences"])
    ]
    item_freq = np.zeros(vocab.size + 1, dtype=np.int64)
    for seq in sequences:
        if not seq.synthetic:
            for it in seq.items[: seq.train_end]:
                item_freq[it] += 1
    return SplitCorpus(sequences, vocab, item_freq, payload.get("dropped_count", 0))


def corpus_stats(corpus: SplitCorpus) -> dict:
    n_events = sum(len(s) for s in corpus.sequences)
    n_users = len(corpus.sequences)
    n_items = corpus.vocab.size
    return {
        "users": n_users,
        "items": n_items,
        "events": n_events,
        "density": n_events / (n_users * n_items) if n_users and n_items else 0.0,
        "dropped_count": corpus.dropped_count,
    }
