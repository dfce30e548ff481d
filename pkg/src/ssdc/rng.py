"""Named random streams derived from one run seed.

Every source of randomness in a run (data, init, augmentation, ...) pulls
its own generator via ``stream(seed, name)``, so toggling one component
never perturbs the draws of another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Deterministic, platform-stable generator for (seed, name)."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng([int(seed), key])
