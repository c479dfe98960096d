"""Synthetic interaction logs with planted interest structure, for experiments and tests.

Items live in disjoint clusters arranged as rings; each user walks the rings
of a small set of assigned clusters, occasionally switching cluster and
advancing one or two ring steps.  Next-item prediction is therefore learnable
while interests stay cleanly separable by cluster.
"""
from __future__ import annotations

from itertools import combinations

import numpy as np

from .corpus import Interaction


def item_name(cluster: int, pos: int) -> str:
    return f"c{cluster}_i{pos:03d}"


def cluster_of_item(name: str) -> int:
    return int(name.split("_")[0][1:])


def planted_interest_log(
    n_users: int = 300,
    n_clusters: int = 4,
    items_per_cluster: int = 30,
    seq_len: int = 30,
    clusters_per_user: int = 2,
    switch_prob: float = 0.25,
    step_choices: tuple[int, ...] = (1, 2),
    step_probs: tuple[float, ...] = (0.85, 0.15),
    seed: int = 0,
) -> list[Interaction]:
    """Interaction log over n_clusters disjoint ring-structured item clusters.

    switch_prob sets the within-sequence interest-switch rate (longer runs for
    smaller values); step_choices/step_probs set the ring-advance distribution
    (wider steps make next-item prediction harder).
    """
    rng = np.random.default_rng(seed)
    pairs = list(combinations(range(n_clusters), clusters_per_user))
    steps = np.array(step_choices)
    step_p = np.array(step_probs) / np.sum(step_probs)
    rows: list[Interaction] = []
    for u in range(n_users):
        user = f"u{u:04d}"
        clusters = pairs[u % len(pairs)]
        pos = {c: int(rng.integers(items_per_cluster)) for c in clusters}
        active = clusters[int(rng.integers(len(clusters)))]
        for t in range(seq_len):
            if rng.random() < switch_prob:
                active = clusters[int(rng.integers(len(clusters)))]
            step = int(rng.choice(steps, p=step_p))
            pos[active] = (pos[active] + step) % items_per_cluster
            rows.append(Interaction(user, item_name(active, pos[active]), t))
    return rows


def write_tsv(rows: list[Interaction], path) -> None:
    lines = ["user_id\titem_id\ttimestamp"]
    lines.extend(f"{r.user}\t{r.item}\t{r.timestamp}" for r in rows)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
