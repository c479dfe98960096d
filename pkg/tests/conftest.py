import numpy as np
import pytest
import torch

from uda4sr.corpus import Interaction, SplitCorpus, Vocab, build_sequences, split_temporal
from uda4sr.gig import ItemGraph

torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter):
    """Replay the acceptance-criteria pass/fail lines after the test summary."""
    try:
        from test_acceptance import ACCEPTANCE_LINES
    except ImportError:
        return
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def graph_from_edges(num_nodes: int, edges, stage: str = "pruned") -> ItemGraph:
    """ItemGraph from undirected (i, j, w) triples."""
    adj = [dict() for _ in range(num_nodes)]
    for i, j, w in edges:
        adj[i][j] = w
        adj[j][i] = w
    return ItemGraph(num_nodes, adj, stage)


def corpus_from_item_lists(item_lists: list[list[str]]) -> SplitCorpus:
    """SplitCorpus from per-user item-id lists (timestamps = positions)."""
    rows = [
        Interaction(f"u{u}", item, t)
        for u, items in enumerate(item_lists)
        for t, item in enumerate(items)
    ]
    sequences, vocab = build_sequences(rows, t_max=50)
    return split_temporal(sequences, vocab)


def random_item_lists(
    rng: np.random.Generator, n_users: int, n_items: int, min_len: int = 5, max_len: int = 50
) -> list[list[str]]:
    return [
        [f"i{rng.integers(n_items)}" for _ in range(rng.integers(min_len, max_len + 1))]
        for _ in range(n_users)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
