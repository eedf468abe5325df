"""Keyed counter-based random streams.

Every stochastic quantity in the engine draws from its own Philox stream,
keyed by a (seed, domain, *subkeys) tuple.  Streams are independent of
iteration order and worker count, so results are bit-reproducible for a
fixed seed no matter how the surrounding loops are scheduled.
"""

from __future__ import annotations

import numpy as np

# Stream domains.  Each (domain, *subkeys) tuple must be unique per draw site.
DOMAIN_INIT = 1
DOMAIN_ATOM = 2
DOMAIN_CODE = 3
DOMAIN_PI = 4
DOMAIN_GAMMA = 5
DOMAIN_MASK = 6
DOMAIN_SYNTH = 7

_U32 = 0xFFFFFFFF


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator over a Philox stream uniquely keyed by (seed, *key).

    Key parts are folded to uint32; the 64-bit seed is the entropy root.
    """
    parts = tuple(int(k) & _U32 for k in key)
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=parts)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Fold (seed, *key) into a fresh 64-bit seed for a child component."""
    parts = tuple(int(k) & _U32 for k in key)
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=parts)
    return int(ss.generate_state(1, dtype=np.uint64)[0])
