"""Graph contrastive learning: subgraph view encoding and the InfoNCE loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .gig import GraphConfig, ItemGraph, SubgraphView, sample_subgraph
from .seeding import spawn_rng


class DimensionMismatch(ValueError):
    pass


class BatchTooSmall(ValueError):
    pass


@dataclass
class ContrastConfig:
    tau: float = 0.2
    lambda_cl: float = 0.1

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.lambda_cl < 0:
            raise ValueError("lambda_cl must be >= 0")


class SubgraphEncoder(nn.Module):
    """Two rounds of message passing over a sampled view, sharing the item table.

    Each layer maps concat(self, weighted-mean of sampled neighbors) through a
    2d->d transform with ReLU; outputs are unit-normalized.
    """

    def __init__(self, d: int):
        super().__init__()
        self.d = d
        self.layers = nn.ModuleList(nn.Linear(2 * d, d, bias=False) for _ in range(2))
        self.double()

    def encode(self, view: SubgraphView, embeddings: nn.Embedding) -> torch.Tensor:
        """Representations for the view's seed items, in seed order: (S, d)."""
        if embeddings.embedding_dim != self.d:
            raise DimensionMismatch(
                f"embedding width {embeddings.embedding_dim} != encoder width {self.d}"
            )
        nodes = view.nodes
        index_of = {n: i for i, n in enumerate(nodes)}
        N = len(nodes)
        weights = torch.zeros(N, N, dtype=torch.float64)
        for i, j, w in view.edges:
            weights[index_of[i], index_of[j]] = w
            weights[index_of[j], index_of[i]] = w
        row_sum = weights.sum(dim=1, keepdim=True)
        agg = weights / row_sum.clamp_min(1e-300)  # zero rows stay zero
        h = embeddings(torch.tensor(nodes, dtype=torch.long))
        for layer in self.layers:
            m = agg @ h
            h = F.relu(layer(torch.cat([h, m], dim=-1)))
        z = h / h.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        seed_rows = torch.tensor([index_of[s] for s in view.seed_items], dtype=torch.long)
        return z[seed_rows]


def make_views(
    graph: ItemGraph,
    items: list[int],
    cfg: GraphConfig,
    rng: np.random.Generator,
) -> tuple[SubgraphView, SubgraphView]:
    """Two independent neighborhood samples of the same seed items."""
    rng1 = spawn_rng(rng)
    rng2 = spawn_rng(rng)
    v1 = sample_subgraph(graph, items, cfg.hops, cfg.fanout, rng1)
    v2 = sample_subgraph(graph, items, cfg.hops, cfg.fanout, rng2)
    return v1, v2


def info_nce(z1: torch.Tensor, z2: torch.Tensor, tau: float) -> torch.Tensor:
    """Symmetric in-batch InfoNCE over aligned rows.

    loss = mean_i -log softmax_j(cos(z1_i, z2_j)/tau)[j=i], averaged over both
    directions.  Identical batches give exactly ln B.
    """
    B = z1.shape[0]
    if B < 2 or z2.shape[0] != B:
        raise BatchTooSmall(f"need aligned batches with B >= 2, got {z1.shape[0]}/{z2.shape[0]}")
    a = z1 / z1.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    b = z2 / z2.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    sim = a @ b.T / tau
    labels = torch.arange(B)
    return 0.5 * (F.cross_entropy(sim, labels) + F.cross_entropy(sim.T, labels))
