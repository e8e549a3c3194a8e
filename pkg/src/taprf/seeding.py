"""Deterministic sub-seeding.

One experiment owns one 64-bit root seed. Every module that needs
randomness derives its own generator from (root, label, *indices), so
independent stages can run in parallel and still reproduce bit-exactly.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_entropy(label: str) -> int:
    # sha256 keeps labels stable across processes (hash() is salted)
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(root_seed: int, label: str, *indices: int) -> np.random.Generator:
    """Return a Generator unique to (root_seed, label, indices)."""
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF, _label_entropy(label)]
    entropy.extend(int(i) & 0xFFFFFFFFFFFFFFFF for i in indices)
    return np.random.default_rng(np.random.SeedSequence(entropy))
