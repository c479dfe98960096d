"""Versioned model checkpoints with config hash and rng state."""
from __future__ import annotations

from pathlib import Path

import torch

from .gcl import SubgraphEncoder
from .interest import InterestModel, ModelConfig

FORMAT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    model: InterestModel,
    gnn: SubgraphEncoder,
    epoch: int,
    config_hash: str,
) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "epoch": epoch,
        "num_items": model.num_items,
        "model_cfg": vars(model.cfg),
        "model_state": model.state_dict(),
        "gnn_state": gnn.state_dict(),
        "rng_state": torch.get_rng_state(),
    }
    torch.save(payload, Path(path))


def load_checkpoint(path: str | Path) -> tuple[InterestModel, SubgraphEncoder, dict]:
    """Rebuild model and encoder; returns (model, gnn, meta) in eval mode."""
    payload = torch.load(Path(path), weights_only=False)
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {payload.get('format_version')}")
    cfg = ModelConfig(**payload["model_cfg"])
    model = InterestModel(payload["num_items"], cfg)
    model.load_state_dict(payload["model_state"])
    gnn = SubgraphEncoder(cfg.d)
    gnn.load_state_dict(payload["gnn_state"])
    torch.set_rng_state(payload["rng_state"])
    model.eval()
    gnn.eval()
    meta = {
        "format_version": payload["format_version"],
        "config_hash": payload["config_hash"],
        "epoch": payload["epoch"],
    }
    return model, gnn, meta
