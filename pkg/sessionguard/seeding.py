"""
PR 10 — Seed Streams

Every random draw in a run comes from one top-level seed. Consumers ask for a
named substream; its seed is a hash of (seed, stream, *parts), so adding a new
consumer never shifts the draws of an existing one.

Streams:
- split:     split and fold assignment
- init:      parameter initialization
- shuffle:   minibatch order
- dropout:   dropout masks
- augment:   contrastive views
- subsample: label-fraction subsampling
- corpus:    synthetic corpus generation
"""

import hashlib
from typing import Tuple

import numpy as np
import torch


class SeedError(Exception):
    """Raised when an unknown substream is requested"""
    pass


# Headline runs report mean ± sd over exactly these seeds
HEADLINE_SEEDS: Tuple[int, ...] = (7, 42, 123)

STREAMS = ["split", "init", "shuffle", "dropout", "augment", "subsample", "corpus"]


def derive_seed(seed: int, stream: str, *parts: object) -> int:
    """
    Derive a 31-bit substream seed from the run seed.

    Args:
        seed: Top-level run seed
        stream: One of STREAMS
        *parts: Extra discriminators (fold index, epoch, session id, ...)

    Returns:
        Non-negative int below 2**31
    """
    if stream not in STREAMS:
        raise SeedError(f"stream must be one of {STREAMS}, got: {stream}")
    key = "|".join(str(p) for p in (int(seed), stream, *parts))
    digest = hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]
    return int(digest, 16) & 0x7FFFFFFF


def numpy_rng(seed: int, stream: str, *parts: object) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, stream, *parts)))


def torch_generator(seed: int, stream: str, *parts: object) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, stream, *parts))
    return generator


def seed_torch(seed: int, stream: str, *parts: object) -> None:
    """Reseed torch's global generator (dropout and nn.Linear init draw from it)."""
    torch.manual_seed(derive_seed(seed, stream, *parts))


__all__ = [
    "HEADLINE_SEEDS",
    "STREAMS",
    "SeedError",
    "derive_seed",
    "numpy_rng",
    "torch_generator",
    "seed_torch",
]
