"""Deterministic random-stream derivation.

All random choices in the package flow from a single master seed.  Distinct
stages and grid cells derive their own independent streams from stable string
labels, so results do not depend on scheduling, worker count, or the order in
which stages happen to run.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_rng(master_seed: int, *keys: int | str) -> np.random.Generator:
    """Return a Generator for the stream identified by ``keys``.

    String keys are folded to 32-bit integers with crc32, so the derivation is
    stable across platforms and interpreter runs.  The same (seed, keys) pair
    always yields the same stream; distinct key tuples yield independent ones.
    """
    entropy = [int(master_seed) & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode("utf-8")))
        else:
            entropy.append(int(key) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
