"""Token-level post-editing attacks: insert, delete, substitute.

Each attack edits round-half-up(epsilon * n) positions. Insertions and
deletions shift every downstream index by one, which is exactly what the
windowed detector statistic is built to survive. All randomness flows from
the AttackSpec seed, so an attack is a pure function of (tokens, spec).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateAttackError, InvalidInputError
from .randomness import MAX_SEED, stream

ATTACK_INSERT = "insert"
ATTACK_DELETE = "delete"
ATTACK_SUBSTITUTE = "substitute"
ATTACK_KINDS = (ATTACK_INSERT, ATTACK_DELETE, ATTACK_SUBSTITUTE)


@dataclass(frozen=True)
class AttackSpec:
    """One attack: what kind, how much of the sequence, which seed."""

    kind: str
    epsilon: float
    seed: int
    vocab_size: int

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.vocab_size < 1:
            raise ConfigError(f"vocab_size must be positive, got {self.vocab_size}")
        if self.kind == ATTACK_SUBSTITUTE and self.vocab_size < 2:
            raise ConfigError("substitution needs a vocab of at least 2")


def edit_count(epsilon: float, n: int) -> int:
    """Round-half-up of epsilon * n."""
    return int(math.floor(epsilon * n + 0.5))


def apply_attack(tokens: np.ndarray, spec: AttackSpec) -> np.ndarray:
    """Return the edited copy of tokens; the input is never modified.

    insert: count uniform tokens at uniform gap positions (with replacement
    over gaps), length n + count. delete: count distinct positions removed,
    length n - count; deleting everything is refused. substitute: count
    distinct positions replaced by a uniform token other than the original,
    length n.
    """
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError("tokens must be a non-empty 1-d sequence")
    n = arr.size
    count = edit_count(spec.epsilon, n)
    if count == 0:
        return arr.copy()
    rng = stream(spec.seed, "attack", spec.kind)

    if spec.kind == ATTACK_INSERT:
        gaps = rng.integers(0, n + 1, size=count)
        values = rng.integers(0, spec.vocab_size, size=count)
        return np.insert(arr, gaps, values)

    if spec.kind == ATTACK_DELETE:
        if count >= n:
            raise DegenerateAttackError(
                f"deleting {count} of {n} tokens leaves nothing to detect"
            )
        positions = rng.choice(n, size=count, replace=False)
        return np.delete(arr, positions)

    if (arr >= spec.vocab_size).any() or (arr < 0).any():
        raise InvalidInputError(
            f"tokens outside vocab of size {spec.vocab_size} cannot be substituted"
        )
    positions = rng.choice(n, size=count, replace=False)
    # Draw over vocab-1 values and skip past the original to exclude it.
    draws = rng.integers(0, spec.vocab_size - 1, size=count)
    originals = arr[positions]
    out = arr.copy()
    out[positions] = np.where(draws < originals, draws, draws + 1)
    return out
