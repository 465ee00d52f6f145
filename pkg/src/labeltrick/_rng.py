"""Seeded random streams.

Every stream is a Philox4x64 counter-based generator keyed by
``SeedSequence((master_seed, *path))`` so an independent, reproducible
stream can be derived for any (run, instance, epoch) path without sharing
state between consumers.
"""
from __future__ import annotations

import numpy as np


def make_rng(seed: int, *path: int) -> np.random.Generator:
    entropy = [int(seed)] + [int(p) for p in path]
    if any(e < 0 for e in entropy):
        raise ValueError("seeds and stream ids must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
