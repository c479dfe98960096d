"""Global item relationship graph: co-occurrence edges, normalization, pruning, sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class SeedNotInGraph(KeyError):
    pass


@dataclass
class GraphConfig:
    order_n: int = 3
    epsilon: float = 0.01
    k_min: int = 5
    k_max: int = 50
    hops: int = 2
    fanout: int = 10

    def __post_init__(self):
        if self.order_n < 1:
            raise ValueError("order_n must be >= 1")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must be in (0, 1)")
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ValueError("need 1 <= k_min <= k_max")
        if self.hops < 1 or self.fanout < 1:
            raise ValueError("hops and fanout must be >= 1")


class ItemGraph:
    """Undirected weighted graph over item indices; node 0 (padding) is isolated.

    Adjacency is a list of {neighbor: weight} dicts.  Symmetry holds at every
    stage: after popularity pruning an edge survives only if both endpoints
    retained it.
    """

    def __init__(self, num_nodes: int, adj: list[dict[int, float]], stage: str):
        self.num_nodes = num_nodes
        self.adj = adj
        self.stage = stage

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        """Neighbors of node i as (index, weight), sorted by index."""
        return sorted(self.adj[i].items())

    def degree(self, i: int) -> int:
        return len(self.adj[i])

    def edges(self):
        """Canonical (i, j, w) triples with i < j, sorted."""
        for i in range(self.num_nodes):
            for j in sorted(self.adj[i]):
                if i < j:
                    yield i, j, self.adj[i][j]

    def num_edges(self) -> int:
        return sum(len(d) for d in self.adj) // 2

    def weight(self, i: int, j: int) -> float:
        return self.adj[i].get(j, 0.0)


@dataclass
class SubgraphView:
    """Neighborhood sample around seed items: nodes, sampled edges, hop distances."""

    seed_items: list[int]
    nodes: list[int]
    edges: list[tuple[int, int, float]]  # canonical i < j
    hop_of: dict[int, int]

    def neighbor_map(self) -> dict[int, list[tuple[int, float]]]:
        nbrs: dict[int, list[tuple[int, float]]] = {n: [] for n in self.nodes}
        for i, j, w in self.edges:
            nbrs[i].append((j, w))
            nbrs[j].append((i, w))
        return nbrs


def build_gig(corpus, n: int) -> ItemGraph:
    """Accumulate 1/d edge weight for every within-sequence pair at interval d <= n.

    Only the train region of each sequence contributes; equal-item pairs are skipped.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    num_nodes = corpus.vocab.size + 1
    adj: list[dict[int, float]] = [dict() for _ in range(num_nodes)]
    for seq in corpus.sequences:
        items = seq.items[: seq.train_end]
        L = len(items)
        for d in range(1, n + 1):
            w = 1.0 / d
            for p in range(L - d):
                a, b = items[p], items[p + d]
                if a == b:
                    continue
                adj[a][b] = adj[a].get(b, 0.0) + w
                adj[b][a] = adj[b].get(a, 0.0) + w
    return ItemGraph(num_nodes, adj, "raw")


def normalize(graph: ItemGraph) -> ItemGraph:
    """Symmetric degree normalization: w_ij / sqrt(s_i * s_j) with s_i the weighted degree."""
    if graph.stage != "raw":
        raise ValueError(f"normalize expects stage=raw, got {graph.stage}")
    strength = [sum(d.values()) for d in graph.adj]
    adj = [
        {j: w / math.sqrt(strength[i] * strength[j]) for j, w in graph.adj[i].items()}
        for i in range(graph.num_nodes)
    ]
    return ItemGraph(graph.num_nodes, adj, "normalized")


def prune_threshold(graph: ItemGraph, epsilon: float) -> ItemGraph:
    """Drop every edge with normalized weight < epsilon; no renormalization."""
    if graph.stage != "normalized":
        raise ValueError(f"prune_threshold expects stage=normalized, got {graph.stage}")
    adj = [
        {j: w for j, w in d.items() if w >= epsilon}
        for d in graph.adj
    ]
    return ItemGraph(graph.num_nodes, adj, "normalized")


def popularity_cap(item_freq_i: int, k_min: int, k_max: int) -> int:
    """Per-node retained-degree cap K_i = clamp(round(k_max / log2(2 + freq)), k_min, k_max)."""
    raw = k_max / math.log2(2 + item_freq_i)
    return int(min(max(math.floor(raw + 0.5), k_min), k_max))


def prune_popularity(
    graph: ItemGraph, item_freq: np.ndarray, k_min: int, k_max: int
) -> ItemGraph:
    """Keep each node's top-K_i neighbors by weight (ties to the smaller index),
    then restore symmetry by keeping only edges retained by both endpoints."""
    retained: list[set[int]] = []
    for i in range(graph.num_nodes):
        cap = popularity_cap(int(item_freq[i]), k_min, k_max)
        ranked = sorted(graph.adj[i].items(), key=lambda jw: (-jw[1], jw[0]))
        retained.append({j for j, _ in ranked[:cap]})
    adj = [
        {j: w for j, w in graph.adj[i].items() if j in retained[i] and i in retained[j]}
        for i in range(graph.num_nodes)
    ]
    return ItemGraph(graph.num_nodes, adj, "pruned")


def sample_subgraph(
    graph: ItemGraph,
    seeds: list[int],
    hops: int,
    fanout: int,
    rng: np.random.Generator,
) -> SubgraphView:
    """Breadth-wise weighted neighborhood sample.

    Each frontier node draws min(fanout, degree) distinct neighbors without
    replacement with probability proportional to edge weight.  Fully
    determined by the rng state.
    """
    if not seeds:
        raise ValueError("seeds must be non-empty")
    for s in seeds:
        if not 1 <= s < graph.num_nodes:
            raise SeedNotInGraph(s)
    hop_of = {s: 0 for s in seeds}
    edges: dict[tuple[int, int], float] = {}
    frontier = sorted(set(seeds))
    for hop in range(1, hops + 1):
        discovered: list[int] = []
        for u in frontier:
            nbrs = graph.neighbors(u)
            if not nbrs:
                continue
            k = min(fanout, len(nbrs))
            weights = np.array([w for _, w in nbrs], dtype=np.float64)
            chosen = rng.choice(len(nbrs), size=k, replace=False, p=weights / weights.sum())
            for c in sorted(chosen):
                j, w = nbrs[c]
                edges[(min(u, j), max(u, j))] = w
                if j not in hop_of:
                    hop_of[j] = hop
                    discovered.append(j)
        frontier = sorted(set(discovered))
        if not frontier:
            break
    return SubgraphView(
        seed_items=list(seeds),
        nodes=sorted(hop_of),
        edges=[(i, j, w) for (i, j), w in sorted(edges.items())],
        hop_of=hop_of,
    )


def save_graph(graph: ItemGraph, path: str | Path, n: int) -> None:
    """Edge-list cache: header `#gig v1 n=<n> stage=<stage> V=<V>`, lines `i j w` with i<j."""
    lines = [f"#gig v1 n={n} stage={graph.stage} V={graph.num_nodes - 1}"]
    for i, j, w in graph.edges():
        lines.append(f"{i} {j} {w:.12g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_graph(path: str | Path) -> tuple[ItemGraph, int]:
    """Parse the edge-list cache back into an ItemGraph; returns (graph, n)."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header = text[0]
    if not header.startswith("#gig v1 "):
        raise ValueError(f"bad graph cache header: {header!r}")
    meta = dict(tok.split("=", 1) for tok in header.split()[2:])
    num_nodes = int(meta["V"]) + 1
    adj: list[dict[int, float]] = [dict() for _ in range(num_nodes)]
    for line in text[1:]:
        if not line.strip():
            continue
        i_s, j_s, w_s = line.split()
        i, j, w = int(i_s), int(j_s), float(w_s)
        adj[i][j] = w
        adj[j][i] = w
    return ItemGraph(num_nodes, adj, meta["stage"]), int(meta["n"])


class _GraphSource:
    def __init__(self, sequences, vocab):
        self.sequences = sequences
        self.vocab = vocab


def build_pruned_gig(
    corpus,
    cfg: GraphConfig,
    extra_sequences=None,
    epsilon: float | None = None,
    order_n: int | None = None,
) -> ItemGraph:
    """Full construction pipeline: build, normalize, threshold, popularity-prune.

    `extra_sequences` (synthetic data) joins the build only when passed in;
    by default the graph stays grounded in real co-occurrence.  The epsilon
    and order overrides bypass GraphConfig bounds for threshold sweeps.
    """
    sequences = [s for s in corpus.sequences if not s.synthetic]
    if extra_sequences:
        sequences = sequences + list(extra_sequences)
    raw = build_gig(_GraphSource(sequences, corpus.vocab), order_n or cfg.order_n)
    normalized = normalize(raw)
    thresholded = prune_threshold(normalized, cfg.epsilon if epsilon is None else epsilon)
    return prune_popularity(thresholded, corpus.item_freq, cfg.k_min, cfg.k_max)
