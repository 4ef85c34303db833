"""Named sub-seeds derived from one root seed.

Every consumer of randomness (init, dropout, selection, synthetic data, ...)
asks for its own stream by name, so adding a consumer never shifts the
numbers another one sees.
"""

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def derive_seed(root: int, *names: str | int) -> int:
    """Deterministic 63-bit seed for the path ``names`` under ``root``."""
    key = [int(root) & 0xFFFFFFFFFFFFFFFF]
    for n in names:
        key.append(_name_key(n) if isinstance(n, str) else int(n) & 0xFFFFFFFFFFFFFFFF)
    lo, hi = (int(v) for v in np.random.SeedSequence(key).generate_state(2, dtype=np.uint32))
    return (lo | (hi << 32)) & ((1 << 63) - 1)


def rng_for(root: int, *names: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *names))
