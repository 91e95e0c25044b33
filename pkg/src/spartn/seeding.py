"""Named seed derivation: every random stream is a pure function of
(root seed, component, ids...), independent of execution order."""
from __future__ import annotations

import hashlib

import numpy as np


def _word(name) -> int:
    if isinstance(name, (int, np.integer)):
        if name < 0:
            raise ValueError("seed components must be non-negative")
        return int(name)
    digest = hashlib.sha256(str(name).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def seed_sequence(root: int, *names) -> np.random.SeedSequence:
    return np.random.SeedSequence([_word(root), *(_word(n) for n in names)])


def derive_seed(root: int, *names) -> int:
    return int(seed_sequence(root, *names).generate_state(1, np.uint64)[0] >> np.uint64(1))


def rng_for(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(root, *names))
