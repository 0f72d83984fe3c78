"""Reproducible random streams.

Every trajectory gets its own counter-based Philox stream keyed by
``(master_seed, index)``; nothing draws from a global generator.
"""
from __future__ import annotations

import os

import numpy as np

SEED_ENV = "DASEP_SEED"


def stream(master_seed: int, index: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(seq))


def streams(master_seed: int, n: int, start: int = 0) -> list[np.random.Generator]:
    return [stream(master_seed, start + i) for i in range(n)]


def seed_record(master_seed: int, index: int) -> dict:
    return {"master_seed": int(master_seed), "index": int(index)}


def resolve_seed(seed: int) -> tuple[int, bool]:
    """Apply the optional environment override; return (seed, overridden)."""
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return int(seed), False
    return int(env), True
