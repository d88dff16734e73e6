"""Deterministic derivation of named randomness substreams from one root seed."""

import hashlib

import numpy as np


def derive_seed(root_seed: int, name: str) -> int:
    """64-bit seed for the substream `name`, stable across runs and platforms."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Fresh generator for one named substream of the root seed.

    Streams with different names are independent, so enabling one randomized
    feature never perturbs another feature's draws.
    """
    return np.random.default_rng(derive_seed(root_seed, name))
