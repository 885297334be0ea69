"""
`hieraseg` seeding.

All randomness flows from one integer seed. Components get their own
generator through `derive_rng(seed, label)`: the label is hashed with
blake2b into a second entropy word, and both feed a numpy `SeedSequence`
driving the PCG64 bit generator (a small-state, counter-free generator of
the same class as splitmix/xoshiro). Equal (seed, label) pairs always give
identical streams; different labels give independent ones.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{int(seed)}/{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, label: str) -> np.random.Generator:
    sequence = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, derive_seed(seed, label)])
    return np.random.Generator(np.random.PCG64(sequence))
