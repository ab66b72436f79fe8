"""Named RNG substreams derived from one run seed.

Every source of randomness in the engine (batch shuffles, k-means
inits, proxy init, synthetic generation) draws from its own named
substream so that adding a consumer never perturbs the others.  Names
hash through sha256, not Python's salted hash, so streams are stable
across processes and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream_seed(seed: int, name: str, *extra: int) -> np.random.SeedSequence:
    """Seed material for the substream (seed, name, *extra)."""
    return np.random.SeedSequence([int(seed), _name_key(name), *map(int, extra)])


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, name, *extra))


def stream_int(seed: int, name: str, *extra: int) -> int:
    """A single derived integer seed, for APIs that take plain ints."""
    return int(stream_seed(seed, name, *extra).generate_state(1, np.uint64)[0])
