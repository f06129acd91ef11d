"""Named substreams derived from a single root seed.

All randomness in the package flows through here. A stream is identified by
a root seed plus a path of words (stage names, sequence indices, record ids);
equal paths always give equal streams, distinct paths give independent ones.
String words are folded to 64-bit integers with BLAKE2b so that record ids
can participate in the derivation.

Caveat inherited from numpy's SeedSequence: trailing zero words are absorbed,
so (root, "tag") and (root, "tag", 0) name the same stream. Callers therefore
use each stage tag at a fixed arity and never both bare and extended.
"""

from __future__ import annotations

import hashlib

import numpy as np

MAX_SEED = 2**64 - 1


def _word(value: int | str) -> int:
    if isinstance(value, str):
        digest = hashlib.blake2b(value.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    if not 0 <= value <= MAX_SEED:
        raise ValueError(f"seed word out of 64-bit range: {value}")
    return int(value)


def seed_sequence(root_seed: int, *path: int | str) -> np.random.SeedSequence:
    """SeedSequence for the substream named by ``path`` under ``root_seed``."""
    return np.random.SeedSequence([_word(root_seed)] + [_word(p) for p in path])


def stream(root_seed: int, *path: int | str) -> np.random.Generator:
    """Independent PCG64 generator for the named substream."""
    return np.random.Generator(np.random.PCG64(seed_sequence(root_seed, *path)))


def derive_seed(root_seed: int, *path: int | str) -> int:
    """A 64-bit seed for handing to components that take a scalar seed."""
    state = seed_sequence(root_seed, *path).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)
