"""Independent random streams derived from one run seed.

Each consumer asks for ``stream(seed, purpose, *ids)``; streams for distinct
``(purpose, ids)`` are statistically independent, so changing the number of
subdomains never perturbs the forcing field and vice versa.
"""

import zlib

import numpy as np

PURPOSES = ("basis", "grf", "coefficient", "probe", "repeat")


def _tag(purpose: str) -> int:
    if purpose not in PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    return zlib.crc32(purpose.encode())


def stream(seed: int, purpose: str, *ids: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _tag(purpose), *map(int, ids)]))
