"""Multi-interest scoring network.

A behavior sequence is embedded, encoded by a causal transformer, condensed
into K interest capsules via dynamic routing, fused against a target item
with attention, and scored with a sigmoid of the preference/target dot
product.  Batched tensors carry right-padded sequences (padding index 0);
causality guarantees real positions never attend to the padding tail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


class SequenceTooLong(ValueError):
    pass


class AllMasked(ValueError):
    pass


@dataclass
class ModelConfig:
    d: int = 64
    n_layers: int = 2
    n_heads: int = 2
    k_capsules: int = 4
    routing_iters: int = 3
    dropout: float = 0.1
    t_max: int = 50

    def __post_init__(self):
        if self.d % self.n_heads != 0:
            raise ValueError("d must be divisible by n_heads")
        if self.k_capsules < 1 or self.routing_iters < 1:
            raise ValueError("k_capsules and routing_iters must be >= 1")


@dataclass
class InterestSet:
    """K interest capsules plus the coupling matrix (softmax over K per position)."""

    capsules: torch.Tensor  # (K, d)
    coupling: torch.Tensor  # (K, L)


def squash(s: torch.Tensor) -> torch.Tensor:
    """Norm-limiting nonlinearity s * |s| / (1 + |s|^2); maps 0 to 0, range [0, 1)."""
    norm2 = (s * s).sum(dim=-1, keepdim=True)
    # clamp keeps the sqrt gradient finite at the origin without moving the value
    return s * torch.sqrt(norm2.clamp_min(1e-30)) / (1.0 + norm2)


class CausalSelfAttention(nn.Module):
    def __init__(self, d: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.q_proj = nn.Linear(d, d)
        self.k_proj = nn.Linear(d, d)
        self.v_proj = nn.Linear(d, d)
        self.out_proj = nn.Linear(d, d)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, L, d = x.shape
        q = self.q_proj(x).view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(x).view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(x).view(B, L, self.n_heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        future = torch.triu(torch.ones(L, L, dtype=torch.bool, device=x.device), diagonal=1)
        scores = scores.masked_fill(future, float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(B, L, d)
        return self.out_proj(out)


class TransformerBlock(nn.Module):
    """attention -> residual -> layer norm -> feed-forward -> residual -> layer norm"""

    def __init__(self, d: int, n_heads: int, dropout: float):
        super().__init__()
        self.attn = CausalSelfAttention(d, n_heads, dropout)
        self.norm1 = nn.LayerNorm(d)
        self.ff1 = nn.Linear(d, d)
        self.ff2 = nn.Linear(d, d)
        self.norm2 = nn.LayerNorm(d)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.attn(x))
        h = self.ff2(self.dropout(F.relu(self.ff1(x))))
        return self.norm2(x + h)


class InterestModel(nn.Module):
    """Shared item embedding table plus encoder, routing, and target attention.

    The routing logit init b0 is a fixed (non-learned) seeded draw that breaks
    capsule symmetry; the padding embedding row stays exactly zero.
    """

    def __init__(self, num_items: int, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.num_items = num_items
        self.item_emb = nn.Embedding(num_items + 1, cfg.d, padding_idx=0)
        self.pos_emb = nn.Embedding(cfg.t_max, cfg.d)
        self.emb_dropout = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.d, cfg.n_heads, cfg.dropout) for _ in range(cfg.n_layers)
        )
        self.routing_transform = nn.Linear(cfg.d, cfg.d, bias=False)
        self.register_buffer("b0", torch.randn(cfg.k_capsules, cfg.t_max))
        self.double()

    # ---- encoding -------------------------------------------------------

    def encode(self, items: torch.Tensor) -> torch.Tensor:
        """items: (B, L) right-padded with 0 -> hidden states (B, L, d)."""
        B, L = items.shape
        if L > self.cfg.t_max:
            raise SequenceTooLong(f"L={L} exceeds t_max={self.cfg.t_max}")
        positions = torch.arange(L, device=items.device)
        x = self.item_emb(items) + self.pos_emb(positions).unsqueeze(0)
        x = self.emb_dropout(x)
        for block in self.blocks:
            x = block(x)
        return x

    def encode_sequence(self, items: list[int]) -> torch.Tensor:
        """Single unpadded sequence -> (L, d)."""
        if not 1 <= len(items) <= self.cfg.t_max:
            raise SequenceTooLong(f"need 1 <= L <= {self.cfg.t_max}, got {len(items)}")
        return self.encode(torch.tensor([items], dtype=torch.long))[0]

    # ---- capsule routing --------------------------------------------------

    def route(
        self, H: torch.Tensor, mask: torch.Tensor, trace: list | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Dynamic routing over encoded positions.

        H: (B, L, d); mask: (B, L) True at valid positions.
        Returns capsules (B, K, d) and coupling (B, K, L); coupling columns at
        valid positions sum to 1 over K, masked columns are zeroed.  When a
        list is passed as `trace`, each iteration appends its (u, c) pair.
        """
        if not bool(mask.any(dim=1).all()):
            raise AllMasked("every sequence needs at least one valid position")
        B, L, _ = H.shape
        e_hat = self.routing_transform(H)  # (B, L, d)
        m = mask.unsqueeze(1).to(H.dtype)  # (B, 1, L)
        b = self.b0[:, :L].unsqueeze(0).expand(B, -1, -1).clone()
        c = None
        u = None
        for _ in range(self.cfg.routing_iters):
            c = torch.softmax(b, dim=1) * m
            s = c @ e_hat  # (B, K, d)
            u = squash(s)
            b = b + u @ e_hat.transpose(1, 2)
            if trace is not None:
                trace.append((u.detach().clone(), c.detach().clone()))
        return u, c

    def capsule_routing(self, H: torch.Tensor, mask: torch.Tensor) -> InterestSet:
        """Single-sequence routing: H (L, d), mask (L,) -> InterestSet."""
        u, c = self.route(H.unsqueeze(0), mask.unsqueeze(0))
        return InterestSet(capsules=u[0], coupling=c[0])

    # ---- fusion and scoring ------------------------------------------------

    def attend_score(self, U: torch.Tensor, Q: torch.Tensor) -> torch.Tensor:
        """Target-attention logits v.q for capsules U (B, K, d) and targets Q (B, C, d)."""
        dots = U @ Q.transpose(1, 2)  # (B, K, C) = u_k . q_c
        a = torch.softmax(dots / math.sqrt(self.cfg.d), dim=1)
        return (a * dots).sum(dim=1)  # (B, C)

    def score_all_items(self, U: torch.Tensor) -> torch.Tensor:
        """Ranking logits over the whole catalog: (B, V+1); padding column -inf."""
        Q = self.item_emb.weight.unsqueeze(0).expand(U.shape[0], -1, -1)
        logits = self.attend_score(U, Q)
        logits[:, 0] = float("-inf")
        return logits

    def forward(self, prefixes: torch.Tensor, candidates: torch.Tensor) -> torch.Tensor:
        """Logits for each (prefix, candidate) pair.

        prefixes: (B, L) right-padded; candidates: (B, C) item indices.
        """
        H = self.encode(prefixes)
        U, _ = self.route(H, prefixes != 0)
        return self.attend_score(U, self.item_emb(candidates))


def target_attention(interests: InterestSet, q: torch.Tensor) -> torch.Tensor:
    """Preference vector v = sum_k softmax_k(u_k.q / sqrt(d)) u_k for one target q."""
    u = interests.capsules
    a = torch.softmax(u @ q / math.sqrt(u.shape[-1]), dim=0)
    return a @ u


def score(v: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """Interaction probability sigmoid(v.q)."""
    return torch.sigmoid(v @ q)


def pad_sequences(seqs: list[list[int]], pad_to: int | None = None) -> torch.Tensor:
    """Right-pad integer sequences with 0 into a (B, L) LongTensor."""
    L = pad_to if pad_to is not None else max(len(s) for s in seqs)
    out = torch.zeros(len(seqs), L, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out
