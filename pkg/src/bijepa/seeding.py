"""Named, independent RNG streams derived from a single experiment seed.

Each stream is keyed by a label ("init:encoder", "data", "probe", ...)
hashed into the seed material, so adding or reordering streams never
perturbs the draws of existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for (seed, name)."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + words))


def derive_seed(seed: int, name: str) -> int:
    """Child integer seed for (seed, name); stable across runs."""
    digest = hashlib.sha256(f"{int(seed)}/{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
