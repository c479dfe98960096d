"""Multi-task training: negative-sampled BCE plus graph-contrastive regularization."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from .corpus import SplitCorpus, user_item_sets
from .evaluator import evaluate_model
from .gan import SyntheticSequence
from .gcl import SubgraphEncoder, info_nce, make_views
from .gig import GraphConfig, ItemGraph
from .interest import InterestModel, ModelConfig, pad_sequences
from .seeding import derive_seed, stream_rng


class CatalogExhausted(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    def __init__(self, batch_id: int):
        self.batch_id = batch_id
        super().__init__(f"non-finite loss at batch {batch_id}")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    n_neg: int = 4
    lambda_cl: float = 0.1
    mu_reg: float = 1e-5
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.n_neg < 1:
            raise ValueError("lr, batch_size, n_neg must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lambda_cl < 0 or self.mu_reg < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class TrainInstance:
    prefix: list[int]
    positive: int
    negatives: list[int]
    user_index: int


def sample_negatives(
    num_items: int, user_items: set[int], n_neg: int, rng: np.random.Generator
) -> list[int]:
    """n_neg distinct items drawn uniformly from the catalog minus the user's items."""
    eligible = np.setdiff1d(
        np.arange(1, num_items + 1), np.fromiter(user_items, dtype=np.int64, count=len(user_items))
    )
    if eligible.size < n_neg:
        raise CatalogExhausted(f"{eligible.size} eligible items < n_neg={n_neg}")
    return [int(i) for i in rng.choice(eligible, size=n_neg, replace=False)]


def sample_instances(
    corpus: SplitCorpus,
    synthetic: list[SyntheticSequence],
    n_neg: int,
    rng: np.random.Generator,
) -> tuple[list[TrainInstance], int]:
    """One instance per sequence: a uniform cut in the train region.

    prefix = items[:t], positive = items[t] with t ~ U[1, train_end-1].
    Synthetic sequences participate with train_end = full length; sequences
    with a train region shorter than 2 are skipped and counted.
    """
    user_sets = user_item_sets(corpus)
    user_index_of = {seq.user: seq.user_index for seq in corpus.sequences}
    num_items = corpus.vocab.size
    instances: list[TrainInstance] = []
    skipped = 0

    def add_instance(items: list[int], train_end: int, user_index: int) -> None:
        nonlocal skipped
        if train_end < 2:
            skipped += 1
            return
        t = int(rng.integers(1, train_end))
        positive = items[t]
        excluded = user_sets[user_index] | {positive}
        negatives = sample_negatives(num_items, excluded, n_neg, rng)
        instances.append(TrainInstance(items[:t], positive, negatives, user_index))

    for seq in corpus.sequences:
        add_instance(seq.items, seq.train_end, seq.user_index)
    for syn in synthetic:
        add_instance(syn.items, len(syn.items), user_index_of[syn.origin_user])
    return instances, skipped


def rec_loss(pos_score: torch.Tensor, neg_scores: torch.Tensor) -> torch.Tensor:
    """Per-instance BCE averaged over the 1 + n_neg terms, then over the batch.

    pos_score: (B,) probabilities; neg_scores: (B, n); scores clamped before logs.
    """
    pos = pos_score.clamp(1e-7, 1 - 1e-7)
    neg = neg_scores.clamp(1e-7, 1 - 1e-7)
    per_instance = (-torch.log(pos) - torch.log(1 - neg).sum(dim=-1)) / (1 + neg.shape[-1])
    return per_instance.mean()


def regularization(model: InterestModel, gnn: SubgraphEncoder) -> torch.Tensor:
    """Sum of squared parameter entries, excluding the padding embedding row.

    The routing logit init is a buffer, so it never enters the sum.
    """
    total = (model.item_emb.weight[1:] ** 2).sum()
    for name, p in model.named_parameters():
        if name != "item_emb.weight":
            total = total + (p**2).sum()
    for p in gnn.parameters():
        total = total + (p**2).sum()
    return total


def total_loss(
    model: InterestModel,
    gnn: SubgraphEncoder,
    batch: list[TrainInstance],
    graph: ItemGraph,
    graph_cfg: GraphConfig,
    tau: float,
    lambda_cl: float,
    mu_reg: float,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, dict]:
    """Recommendation BCE + lambda_cl * InfoNCE over two views of the batch's
    unique positives + mu_reg * parameter regularization."""
    if not batch:
        raise ValueError("batch must be non-empty")
    prefixes = pad_sequences([inst.prefix for inst in batch])
    candidates = torch.tensor(
        [[inst.positive] + inst.negatives for inst in batch], dtype=torch.long
    )
    probs = torch.sigmoid(model(prefixes, candidates))
    rec = rec_loss(probs[:, 0], probs[:, 1:])

    cl = torch.zeros((), dtype=torch.float64)
    uniq = sorted({inst.positive for inst in batch})
    if lambda_cl > 0 and len(uniq) >= 2:
        v1, v2 = make_views(graph, uniq, graph_cfg, rng)
        z1 = gnn.encode(v1, model.item_emb)
        z2 = gnn.encode(v2, model.item_emb)
        cl = info_nce(z1, z2, tau)

    reg = regularization(model, gnn)
    loss = rec + lambda_cl * cl + mu_reg * reg
    parts = {"rec": float(rec.detach()), "cl": float(cl.detach()), "reg": float(reg.detach())}
    return loss, parts


def build_model(num_items: int, cfg: ModelConfig, seed: int) -> InterestModel:
    torch.manual_seed(derive_seed(seed, "init/model"))
    return InterestModel(num_items, cfg)


def build_gnn(d: int, seed: int) -> SubgraphEncoder:
    torch.manual_seed(derive_seed(seed, "init/gnn"))
    return SubgraphEncoder(d)


def train(
    corpus: SplitCorpus,
    graph: ItemGraph,
    synthetic: list[SyntheticSequence],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    graph_cfg: GraphConfig,
    tau: float = 0.2,
) -> tuple[InterestModel, SubgraphEncoder, list[dict]]:
    """Epoch loop with early stopping on validation NDCG@10.

    History rows: {epoch, rec_loss, cl_loss, reg, val_recall10, val_ndcg10};
    epoch 0 records the untrained validation metrics.  Returns the
    best-validation checkpoint.
    """
    model = build_model(corpus.vocab.size, model_cfg, train_cfg.seed)
    gnn = build_gnn(model_cfg.d, train_cfg.seed)
    if train_cfg.max_epochs == 0:
        return model, gnn, []

    opt = torch.optim.Adam(
        list(model.parameters()) + list(gnn.parameters()),
        lr=train_cfg.lr,
        betas=(0.9, 0.999),
        eps=1e-8,
    )
    instance_rng = stream_rng(train_cfg.seed, "train/instances")
    shuffle_rng = stream_rng(train_cfg.seed, "train/shuffle")
    views_rng = stream_rng(train_cfg.seed, "train/views")
    torch.manual_seed(derive_seed(train_cfg.seed, "train/dropout"))

    def snapshot():
        return (
            copy.deepcopy(model.state_dict()),
            copy.deepcopy(gnn.state_dict()),
        )

    def val_metrics():
        rep = evaluate_model(corpus, model, "valid")
        return rep.recall[10], rep.ndcg[10]

    r10, n10 = val_metrics()
    history = [
        {
            "epoch": 0,
            "rec_loss": None,
            "cl_loss": None,
            "reg": None,
            "val_recall10": r10,
            "val_ndcg10": n10,
        }
    ]
    best_state = snapshot()
    best_ndcg = n10
    wait = 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        instances, _ = sample_instances(corpus, synthetic, train_cfg.n_neg, instance_rng)
        order = shuffle_rng.permutation(len(instances))
        model.train()
        gnn.train()
        sums = {"rec": 0.0, "cl": 0.0, "reg": 0.0}
        n_batches = 0
        for batch_id, start in enumerate(range(0, len(order), train_cfg.batch_size)):
            batch = [instances[i] for i in order[start : start + train_cfg.batch_size]]
            loss, parts = total_loss(
                model, gnn, batch, graph, graph_cfg,
                tau, train_cfg.lambda_cl, train_cfg.mu_reg, views_rng,
            )
            if not torch.isfinite(loss):
                raise NonFiniteLoss(batch_id)
            opt.zero_grad()
            loss.backward()
            opt.step()
            for key in sums:
                sums[key] += parts[key]
            n_batches += 1
        model.eval()
        gnn.eval()
        r10, n10 = val_metrics()
        history.append(
            {
                "epoch": epoch,
                "rec_loss": sums["rec"] / n_batches,
                "cl_loss": sums["cl"] / n_batches,
                "reg": sums["reg"] / n_batches,
                "val_recall10": r10,
                "val_ndcg10": n10,
            }
        )
        if n10 > best_ndcg:
            best_ndcg = n10
            best_state = snapshot()
            wait = 0
        else:
            wait += 1
            if wait >= train_cfg.patience:
                break
    model.load_state_dict(best_state[0])
    gnn.load_state_dict(best_state[1])
    model.eval()
    gnn.eval()
    return model, gnn, history
