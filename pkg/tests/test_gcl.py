import math

import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from uda4sr.gcl import (
    BatchTooSmall,
    DimensionMismatch,
    SubgraphEncoder,
    info_nce,
    make_views,
)
from uda4sr.gig import GraphConfig, SubgraphView

from conftest import graph_from_edges
from helpers import fd_group_check


def embedding_table(num_items, d, seed=0) -> nn.Embedding:
    torch.manual_seed(seed)
    emb = nn.Embedding(num_items + 1, d, padding_idx=0).double()
    return emb


class TestSubgraphEncoder:
    def test_isolated_seed_reduces_to_zero_neighbor_formula(self):
        d = 4
        torch.manual_seed(2)
        enc = SubgraphEncoder(d)
        emb = embedding_table(6, d, seed=3)
        view = SubgraphView(seed_items=[3], nodes=[3], edges=[], hop_of={3: 0})
        z = enc.encode(view, emb)
        e = emb.weight[3]
        zero = torch.zeros(d, dtype=torch.float64)
        h1 = F.relu(enc.layers[0](torch.cat([e, zero])))
        h2 = F.relu(enc.layers[1](torch.cat([h1, zero])))
        expected = h2 / h2.norm().clamp_min(1e-12)
        assert torch.allclose(z[0], expected, atol=1e-12)

    def test_outputs_unit_or_zero_norm(self):
        d = 6
        torch.manual_seed(4)
        enc = SubgraphEncoder(d)
        emb = embedding_table(10, d, seed=5)
        view = SubgraphView(
            seed_items=[1, 2, 5],
            nodes=[1, 2, 3, 5],
            edges=[(1, 2, 0.5), (2, 3, 0.1), (3, 5, 0.9)],
            hop_of={1: 0, 2: 0, 5: 0, 3: 1},
        )
        z = enc.encode(view, emb).detach()
        for row in z:
            n = float(row.norm())
            assert n == pytest.approx(1.0, abs=1e-9) or n == 0.0

    def test_path_graph_matches_dense_oracle(self):
        d = 3
        torch.manual_seed(6)
        enc = SubgraphEncoder(d)
        emb = embedding_table(5, d, seed=7)
        edges = [(1, 2, 0.4), (2, 3, 0.7), (3, 4, 0.2), (4, 5, 1.1)]
        view = SubgraphView(
            seed_items=[1, 3, 5],
            nodes=[1, 2, 3, 4, 5],
            edges=edges,
            hop_of={1: 0, 3: 0, 5: 0, 2: 1, 4: 1},
        )
        z = enc.encode(view, emb).detach().numpy()

        nodes = view.nodes
        W = np.zeros((5, 5))
        for i, j, w in edges:
            W[nodes.index(i), nodes.index(j)] = w
            W[nodes.index(j), nodes.index(i)] = w
        row = W.sum(axis=1, keepdims=True)
        A = np.divide(W, row, out=np.zeros_like(W), where=row > 0)
        h = emb.weight.detach().numpy()[nodes]
        for layer in enc.layers:
            Wmat = layer.weight.detach().numpy()
            h = np.maximum(np.concatenate([h, A @ h], axis=1) @ Wmat.T, 0.0)
        expected = h / np.maximum(np.linalg.norm(h, axis=1, keepdims=True), 1e-12)
        np.testing.assert_allclose(z, expected[[0, 2, 4]], atol=1e-10)

    def test_dimension_mismatch(self):
        enc = SubgraphEncoder(4)
        emb = embedding_table(5, 8)
        view = SubgraphView(seed_items=[1], nodes=[1], edges=[], hop_of={1: 0})
        with pytest.raises(DimensionMismatch):
            enc.encode(view, emb)

    def test_deterministic(self):
        d = 4
        torch.manual_seed(8)
        enc = SubgraphEncoder(d)
        emb = embedding_table(6, d)
        view = SubgraphView(
            seed_items=[1, 2], nodes=[1, 2, 4], edges=[(1, 2, 0.3), (2, 4, 0.6)],
            hop_of={1: 0, 2: 0, 4: 1},
        )
        assert torch.equal(enc.encode(view, emb), enc.encode(view, emb))


class TestMakeViews:
    def test_saturating_graph_gives_identical_views(self):
        g = graph_from_edges(5, [(1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0)])
        cfg = GraphConfig(hops=2, fanout=10)
        v1, v2 = make_views(g, [1, 3], cfg, np.random.default_rng(0))
        assert v1 == v2

    def test_zero_hops_gives_bare_seed_sets(self):
        g = graph_from_edges(5, [(1, 2, 1.0)])
        cfg = GraphConfig()
        cfg.hops = 0  # op-level case below the config's validated range
        v1, v2 = make_views(g, [1, 2], cfg, np.random.default_rng(0))
        for v in (v1, v2):
            assert v.nodes == [1, 2]
            assert v.edges == []

    def test_views_differ_on_dense_graph(self):
        rng_build = np.random.default_rng(9)
        edges = [
            (i, j, float(rng_build.uniform(0.1, 1.0)))
            for i in range(1, 20)
            for j in range(i + 1, 20)
        ]
        g = graph_from_edges(20, edges)
        cfg = GraphConfig(hops=2, fanout=3)
        rng = np.random.default_rng(10)
        differing = 0
        for _ in range(100):
            v1, v2 = make_views(g, [1, 5], cfg, rng)
            if set(v1.edges) != set(v2.edges):
                differing += 1
        assert differing >= 95


class TestInfoNCE:
    def test_identical_batch_gives_log_b(self):
        for B in (2, 4, 16):
            z = torch.ones(B, 6, dtype=torch.float64) / math.sqrt(6.0)
            loss = info_nce(z, z.clone(), tau=0.2)
            assert float(loss) == pytest.approx(math.log(B), abs=1e-9)

    def test_orthogonal_positives_closed_form(self):
        B, tau = 4, 0.2
        z = torch.eye(B, dtype=torch.float64)
        loss = info_nce(z, z.clone(), tau)
        expected = -math.log(math.exp(1 / tau) / (math.exp(1 / tau) + (B - 1)))
        assert float(loss) == pytest.approx(expected, abs=1e-6)
        assert expected == pytest.approx(0.0200, abs=5e-5)  # ln(1 + 3e^-5)

    def test_bounds(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            B = int(rng.integers(2, 9))
            z1 = torch.from_numpy(rng.normal(size=(B, 5)))
            z2 = torch.from_numpy(rng.normal(size=(B, 5)))
            z1 = z1 / z1.norm(dim=-1, keepdim=True)
            z2 = z2 / z2.norm(dim=-1, keepdim=True)
            loss = float(info_nce(z1, z2, 0.2))
            assert 0.0 <= loss <= math.log(B) + 2 / 0.2

    def test_batch_permutation_invariance(self):
        rng = np.random.default_rng(12)
        z1 = torch.from_numpy(rng.normal(size=(6, 4)))
        z2 = torch.from_numpy(rng.normal(size=(6, 4)))
        base = float(info_nce(z1, z2, 0.3))
        perm = torch.from_numpy(rng.permutation(6))
        permuted = float(info_nce(z1[perm], z2[perm], 0.3))
        assert abs(base - permuted) <= 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        z1 = torch.from_numpy(rng.normal(size=(4, 5))).requires_grad_(True)
        z2 = torch.from_numpy(rng.normal(size=(4, 5))).requires_grad_(True)
        fd_group_check(lambda: info_nce(z1, z2, 0.2), [("z1", z1), ("z2", z2)],
                       step=1e-5, rel_tol=1e-4)

    def test_aligning_positives_decreases_loss(self):
        rng = np.random.default_rng(14)
        z2 = torch.from_numpy(rng.normal(size=(5, 4)))
        z2 = z2 / z2.norm(dim=-1, keepdim=True)
        noise = torch.from_numpy(rng.normal(size=(5, 4)))
        far = z2 + 1.0 * noise
        near = z2 + 0.1 * noise
        assert float(info_nce(near, z2, 0.2)) < float(info_nce(far, z2, 0.2))

    def test_batch_too_small(self):
        z = torch.ones(1, 3, dtype=torch.float64)
        with pytest.raises(BatchTooSmall):
            info_nce(z, z, 0.2)
        with pytest.raises(BatchTooSmall):
            info_nce(torch.ones(3, 2, dtype=torch.float64), torch.ones(2, 2, dtype=torch.float64), 0.2)
