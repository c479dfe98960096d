"""Named RNG streams derived from one global seed.

Every stochastic decision in the pipeline (weight init, instance cuts,
negative sampling, subgraph sampling, Gumbel noise, ...) draws from a
stream identified by a string name.  The stream seed is the first 8 bytes
of sha256(f"{global_seed}|{name}"), so streams are independent of each
other and stable across runs and platforms.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(global_seed: int, stream: str) -> int:
    """Map (global seed, stream name) to a 63-bit stream seed."""
    digest = hashlib.sha256(f"{global_seed}|{stream}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def stream_rng(global_seed: int, stream: str) -> np.random.Generator:
    """Fresh numpy Generator for a named stream."""
    return np.random.default_rng(derive_seed(global_seed, stream))


def spawn_rng(rng: np.random.Generator) -> np.random.Generator:
    """Child generator seeded from the parent's stream (advances the parent)."""
    return np.random.default_rng(int(rng.integers(0, 2**63 - 1)))
