"""
Named random streams.

Every random draw in the pipeline comes from a generator derived from the
master seed and a (component, id, ...) name, so a CBG, place or replicate
sees the same numbers no matter which worker process runs it or in which
order.
"""
import hashlib
from typing import Tuple

import numpy as np


def _name_key(component: str, ids: Tuple) -> Tuple[int, ...]:
    """Turn a stream name into a spawn key of 32-bit words."""
    text = "\x1f".join([component] + [str(i) for i in ids])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


def stream(master_seed: int, component: str, *ids) -> np.random.Generator:
    """
    Return the generator for a named stream.

    Args:
        master_seed: run-level 64-bit seed
        component: pipeline component, e.g. "anneal", "workplace"
        *ids: identifiers within the component (cbg id, place id, replicate)

    Returns:
        numpy.random.Generator
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=_name_key(component, ids))
    return np.random.default_rng(seq)


def seed_int(rng: np.random.Generator) -> int:
    """Draw a 32-bit integer seed for libraries that want a plain int (networkx)."""
    return int(rng.integers(0, 2 ** 31 - 1))
