"""GAN sequence augmentation.

A recurrent generator continues real prefixes token by token; discrete draws
use Gumbel-softmax with a straight-through argmax, feeding the soft mixture
embedding forward so gradients reach the generator.  A feed-forward
discriminator scores mean-pooled sequence embeddings.  Both share the item
embedding table read-only.  A batch-entropy diversity penalty counters mode
collapse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class BadLength(ValueError):
    pass


class InvalidDistribution(ValueError):
    pass


@dataclass
class AugmentConfig:
    prefix_frac: float = 0.5
    rho_aug: float = 0.2
    gumbel_temp_start: float = 1.0
    gumbel_temp_end: float = 0.5
    eta_div: float = 0.1
    mle_epochs: int = 3
    adv_steps: int = 200
    batch_size: int = 32
    lr: float = 1e-2

    def __post_init__(self):
        if not 0.0 < self.prefix_frac < 1.0:
            raise ValueError("prefix_frac must be in (0, 1)")
        if self.rho_aug < 0:
            raise ValueError("rho_aug must be >= 0")
        if self.gumbel_temp_start <= 0 or self.gumbel_temp_end <= 0:
            raise ValueError("gumbel temperatures must be positive")


@dataclass
class SyntheticSequence:
    items: list[int]
    origin_user: str
    synthetic: bool = True


class SequenceGenerator(nn.Module):
    """tanh recurrent cell over embeddings with a projection to item logits.

    The padding index never receives probability mass (logit forced to -inf).
    """

    def __init__(self, d: int, num_items: int):
        super().__init__()
        self.d = d
        self.num_items = num_items
        self.in_proj = nn.Linear(d, d)
        self.hid_proj = nn.Linear(d, d, bias=False)
        self.out_proj = nn.Linear(d, num_items + 1)
        self.double()

    def cell(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.in_proj(x) + self.hid_proj(h))

    def step_logits(self, h: torch.Tensor) -> torch.Tensor:
        logits = self.out_proj(h)
        pad = torch.zeros_like(logits, dtype=torch.bool)
        pad[..., 0] = True
        return logits.masked_fill(pad, float("-inf"))


class SequenceDiscriminator(nn.Module):
    """Two-layer scorer over the mean-pooled sequence embedding -> authenticity in (0,1)."""

    def __init__(self, d: int):
        super().__init__()
        self.fc1 = nn.Linear(d, d)
        self.fc2 = nn.Linear(d, 1)
        self.double()

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.fc2(F.relu(self.fc1(pooled)))).squeeze(-1)


def gumbel_softmax_step(
    logits: torch.Tensor, gumbel: torch.Tensor, temp: float
) -> tuple[torch.Tensor, torch.Tensor]:
    """One relaxed draw: soft = softmax((logits+g)/temp), hard = argmax(soft).

    argmax(logits + Gumbel noise) is an exact categorical sample; with zero
    noise and temp -> 0 the hard token is the logit argmax.
    """
    soft = torch.softmax((logits + gumbel) / temp, dim=-1)
    hard = soft.argmax(dim=-1)
    return soft, hard


def _gumbel_noise(rng: np.random.Generator, shape: tuple[int, ...]) -> torch.Tensor:
    u = rng.uniform(low=1e-12, high=1.0, size=shape)
    return torch.from_numpy(-np.log(-np.log(u)))


def generate_continuations(
    gen: SequenceGenerator,
    emb: torch.Tensor,
    prefixes: list[list[int]],
    target_lens: list[int],
    temp: float,
    rng: np.random.Generator,
) -> tuple[list[torch.Tensor], list[list[int]]]:
    """Continue a ragged batch of prefixes to their target lengths.

    Returns per-sequence soft distributions (steps_i, V+1) carrying the
    autograd graph, and the hard token lists.  Deterministic given the rng.
    """
    B = len(prefixes)
    for p, t in zip(prefixes, target_lens):
        if not p or t <= len(p):
            raise BadLength(f"need non-empty prefix and target_len > len(prefix), got {len(p)}/{t}")
    emb = emb.detach()
    plens = torch.tensor([len(p) for p in prefixes])
    tlens = torch.tensor(target_lens)
    max_t = int(tlens.max())
    tokens = torch.zeros(B, max_t, dtype=torch.long)
    for i, p in enumerate(prefixes):
        tokens[i, : len(p)] = torch.tensor(p, dtype=torch.long)

    soft_rows: list[list[torch.Tensor]] = [[] for _ in range(B)]
    hard_rows: list[list[int]] = [[] for _ in range(B)]
    h = torch.zeros(B, gen.d, dtype=torch.float64)
    x = emb[tokens[:, 0]]
    for t in range(max_t - 1):
        h = gen.cell(x, h)
        logits = gen.step_logits(h)
        gumbel = torch.zeros(B, gen.num_items + 1, dtype=torch.float64)
        gumbel[:, 1:] = _gumbel_noise(rng, (B, gen.num_items))
        soft, hard = gumbel_softmax_step(logits, gumbel, temp)
        gen_x = soft @ emb  # soft mixture fed forward so gradients flow
        real_x = emb[tokens[:, t + 1]]
        in_prefix = (t + 1 < plens).unsqueeze(-1)
        x = torch.where(in_prefix, real_x, gen_x)
        for i in range(B):
            if plens[i] <= t + 1 < tlens[i]:
                soft_rows[i].append(soft[i])
                hard_rows[i].append(int(hard[i]))
    return [torch.stack(rows) for rows in soft_rows], hard_rows


def generate_continuation(
    gen: SequenceGenerator,
    emb: torch.Tensor,
    prefix: list[int],
    target_len: int,
    temp: float,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, list[int]]:
    """Single-sequence continuation: (soft (steps, V+1), hard tokens)."""
    soft, hard = generate_continuations(gen, emb, [prefix], [target_len], temp, rng)
    return soft[0], hard[0]


def diversity_penalty(soft_batch: torch.Tensor) -> torch.Tensor:
    """ln V - H(mean distribution); zero iff the batch-mean is uniform.

    soft_batch: (N, V) rows over real items.  Rows more than 1e-6 off the
    simplex raise InvalidDistribution.
    """
    if soft_batch.ndim != 2 or soft_batch.shape[0] == 0:
        raise InvalidDistribution("need a non-empty (N, V) batch")
    with torch.no_grad():
        row_err = (soft_batch.sum(dim=-1) - 1.0).abs().max()
        neg = (-soft_batch.min()).clamp_min(0.0)
        if float(row_err) > 1e-6 or float(neg) > 1e-6:
            raise InvalidDistribution(f"row off simplex by {float(max(row_err, neg)):.3g}")
    v = soft_batch.shape[1]
    p_bar = soft_batch.mean(dim=0)
    entropy = -(p_bar * torch.log(p_bar.clamp_min(1e-300))).sum()
    return math.log(v) - entropy


def discriminator_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """BCE toward 1 on real plus BCE toward 0 on fake scores."""
    d_real = d_real.clamp(1e-12, 1 - 1e-12)
    d_fake = d_fake.clamp(1e-12, 1 - 1e-12)
    return -torch.log(d_real).mean() - torch.log(1 - d_fake).mean()


def generator_loss(
    d_fake: torch.Tensor, soft_rows: torch.Tensor, eta_div: float
) -> torch.Tensor:
    """Non-saturating -log D(fake) plus the weighted diversity penalty."""
    adv = -torch.log(d_fake.clamp(1e-12, 1 - 1e-12)).mean()
    if eta_div == 0.0:
        return adv
    return adv + eta_div * diversity_penalty(soft_rows)


def _pool_real(emb: torch.Tensor, sequences: list[list[int]]) -> torch.Tensor:
    return torch.stack([emb[torch.tensor(s, dtype=torch.long)].mean(dim=0) for s in sequences])


def _pool_fake(
    emb: torch.Tensor,
    prefixes: list[list[int]],
    soft: list[torch.Tensor],
    hard: list[list[int]],
) -> torch.Tensor:
    """Mean-pool prefix embeddings with straight-through continuation embeddings."""
    pooled = []
    for p, s, hd in zip(prefixes, soft, hard):
        head = emb[torch.tensor(p, dtype=torch.long)]
        one_hot = F.one_hot(torch.tensor(hd), emb.shape[0]).to(s.dtype)
        tail = (one_hot + s - s.detach()) @ emb
        pooled.append(torch.cat([head, tail], dim=0).mean(dim=0))
    return torch.stack(pooled)


def prefix_length(length: int, prefix_frac: float) -> int:
    return min(max(int(math.ceil(prefix_frac * length)), 1), length - 1)


def adversarial_step(
    real_batch: list[list[int]],
    gen: SequenceGenerator,
    disc: SequenceDiscriminator,
    opt_g: torch.optim.Optimizer,
    opt_d: torch.optim.Optimizer,
    emb: torch.Tensor,
    cfg: AugmentConfig,
    temp: float,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """One D update on detached fakes, then one non-saturating G update."""
    if len(real_batch) < 2:
        raise BadLength("adversarial step needs a batch of >= 2 sequences")
    emb = emb.detach()
    prefixes = [seq[: prefix_length(len(seq), cfg.prefix_frac)] for seq in real_batch]
    target_lens = [len(seq) for seq in real_batch]
    soft, hard = generate_continuations(gen, emb, prefixes, target_lens, temp, rng)
    pooled_real = _pool_real(emb, real_batch)
    pooled_fake = _pool_fake(emb, prefixes, soft, hard)

    opt_d.zero_grad()
    loss_d = discriminator_loss(disc(pooled_real), disc(pooled_fake.detach()))
    loss_d.backward()
    opt_d.step()

    opt_g.zero_grad()
    loss_g = generator_loss(disc(pooled_fake), torch.cat([s[:, 1:] for s in soft]), cfg.eta_div)
    loss_g.backward()
    opt_g.step()
    return float(loss_d.detach()), float(loss_g.detach())


def pretrain_generator_mle(
    gen: SequenceGenerator,
    emb: torch.Tensor,
    train_sequences: list[list[int]],
    epochs: int,
    lr: float,
    rng: np.random.Generator,
) -> list[float]:
    """Teacher-forced next-item cross-entropy; epochs=0 leaves params untouched.

    Returns the per-epoch mean loss curve.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if epochs == 0:
        return []
    emb = emb.detach()
    seqs = [s for s in train_sequences if len(s) >= 2]
    opt = torch.optim.Adam(gen.parameters(), lr=lr)
    curve = []
    for _ in range(epochs):
        order = rng.permutation(len(seqs))
        total, count = 0.0, 0
        for start in range(0, len(order), 64):
            batch = [seqs[i] for i in order[start : start + 64]]
            max_l = max(len(s) for s in batch)
            tokens = torch.zeros(len(batch), max_l, dtype=torch.long)
            for i, s in enumerate(batch):
                tokens[i, : len(s)] = torch.tensor(s, dtype=torch.long)
            h = torch.zeros(len(batch), gen.d, dtype=torch.float64)
            losses = []
            for t in range(max_l - 1):
                h = gen.cell(emb[tokens[:, t]], h)
                logits = gen.step_logits(h)
                target = tokens[:, t + 1]
                valid = target != 0
                if valid.any():
                    losses.append(F.cross_entropy(logits[valid], target[valid], reduction="sum"))
            n_terms = int((tokens[:, 1:] != 0).sum())
            loss = torch.stack(losses).sum() / n_terms
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * n_terms
            count += n_terms
        curve.append(total / count)
    return curve


def synthesize(
    corpus,
    gen: SequenceGenerator,
    emb: torch.Tensor,
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> list[SyntheticSequence]:
    """round(rho_aug * |train sequences|) synthetic sequences from real prefixes.

    Source users are drawn uniformly without replacement, cycling once
    exhausted; each synthetic sequence keeps the source's train-region length.
    """
    real = [s for s in corpus.sequences if not s.synthetic]
    n_syn = int(round(cfg.rho_aug * len(real)))
    if n_syn == 0:
        return []
    eligible = [s for s in real if s.train_end >= 2]
    if not eligible:
        return []
    sources = []
    while len(sources) < n_syn:
        order = rng.permutation(len(eligible))
        sources.extend(eligible[i] for i in order[: n_syn - len(sources)])
    prefixes, target_lens = [], []
    for seq in sources:
        L = seq.train_end
        prefixes.append(seq.items[: prefix_length(L, cfg.prefix_frac)])
        target_lens.append(L)
    out: list[SyntheticSequence] = []
    with torch.no_grad():
        for start in range(0, len(sources), 64):
            chunk = slice(start, start + 64)
            _, hard = generate_continuations(
                gen, emb, prefixes[chunk], target_lens[chunk], cfg.gumbel_temp_end, rng
            )
            for seq, pref, tail in zip(sources[chunk], prefixes[chunk], hard):
                out.append(SyntheticSequence(items=pref + tail, origin_user=seq.user))
    return out


def anneal_temperature(cfg: AugmentConfig, step: int, total_steps: int) -> float:
    """Linear anneal from gumbel_temp_start to gumbel_temp_end over the run."""
    if total_steps <= 1:
        return cfg.gumbel_temp_end
    frac = step / (total_steps - 1)
    return cfg.gumbel_temp_start + frac * (cfg.gumbel_temp_end - cfg.gumbel_temp_start)


def train_gan(
    corpus,
    emb: torch.Tensor,
    d: int,
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> tuple[SequenceGenerator, SequenceDiscriminator, dict]:
    """MLE pretraining followed by adversarial steps over train-region batches."""
    gen = SequenceGenerator(d, corpus.vocab.size)
    disc = SequenceDiscriminator(d)
    train_seqs = [s.items[: s.train_end] for s in corpus.sequences if not s.synthetic]
    train_seqs = [s for s in train_seqs if len(s) >= 2]
    mle_curve = pretrain_generator_mle(gen, emb, train_seqs, cfg.mle_epochs, cfg.lr, rng)
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr)
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr)
    d_curve, g_curve = [], []
    for step in range(cfg.adv_steps):
        idx = rng.choice(len(train_seqs), size=min(cfg.batch_size, len(train_seqs)), replace=False)
        batch = [train_seqs[i] for i in idx]
        temp = anneal_temperature(cfg, step, cfg.adv_steps)
        loss_d, loss_g = adversarial_step(batch, gen, disc, opt_g, opt_d, emb, cfg, temp, rng)
        d_curve.append(loss_d)
        g_curve.append(loss_g)
    return gen, disc, {"mle_loss": mle_curve, "d_loss": d_curve, "g_loss": g_curve}
