"""Keyed balanced token partition and per-position matching sets.

A partition labels every vocabulary token with one bit. Position ``i`` of a
response then has matching set ``G_i`` = tokens whose bit equals ``i mod 2``,
so consecutive positions use complementary halves of the vocabulary. The
watermark decoder steers commits toward matching tokens; the detector counts
how many final tokens landed in their position's matching set.

Two modes are supported:

* ``keyed`` (default): a BLAKE2b mix value keyed by the secret is computed
  per token id, token ids are sorted by (mix, id), and the bit is the rank
  parity. The split is exactly balanced and depends on every key byte.
* ``token-id-mod-2``: bit = token id mod 2, ignoring the key. Useful for
  experiments where the labeling must be inspectable by eye.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidTokenError, InvalidVocabularyError

MODE_KEYED = "keyed"
MODE_TOKEN_ID_MOD_2 = "token-id-mod-2"
PARTITION_MODES = (MODE_KEYED, MODE_TOKEN_ID_MOD_2)

MIN_KEY_BYTES = 16
RECOMMENDED_KEY_BYTES = 32
# BLAKE2b accepts at most 64 key bytes; longer secrets are folded first.
_MAX_BLAKE2_KEY = 64


@dataclass(frozen=True)
class WatermarkKey:
    """Opaque secret plus a short label used in key files and reports."""

    secret: bytes
    key_id: str

    def __post_init__(self) -> None:
        if len(self.secret) < MIN_KEY_BYTES:
            raise ConfigError(
                f"key must hold at least {MIN_KEY_BYTES} bytes, got {len(self.secret)}"
            )
        if not self.key_id or any(ch.isspace() for ch in self.key_id):
            raise ConfigError("key_id must be non-empty and contain no whitespace")

    @classmethod
    def generate(cls, key_id: str, num_bytes: int = RECOMMENDED_KEY_BYTES) -> "WatermarkKey":
        return cls(secret=os.urandom(num_bytes), key_id=key_id)


def save_key(key: WatermarkKey, path: str) -> None:
    """Write the single-record key file: ``<key_id> <hex bytes>``."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{key.key_id} {key.secret.hex()}\n")


def load_key(path: str) -> WatermarkKey:
    with open(path, "r", encoding="ascii") as fh:
        line = fh.readline().strip()
    parts = line.split()
    if len(parts) != 2:
        raise ConfigError(f"key file {path!r} must hold one '<key_id> <hex>' record")
    key_id, hex_bytes = parts
    try:
        secret = bytes.fromhex(hex_bytes)
    except ValueError as exc:
        raise ConfigError(f"key file {path!r}: invalid hex: {exc}") from exc
    return WatermarkKey(secret=secret, key_id=key_id)


@dataclass(frozen=True)
class ParityPartition:
    """Immutable bit labeling of a vocabulary; safe to share across threads."""

    vocab_size: int
    mode: str
    bits: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self) -> None:
        self.bits.setflags(write=False)

    def bit_of(self, token: int) -> int:
        if not 0 <= token < self.vocab_size:
            raise InvalidTokenError(
                f"token {token} outside vocabulary of size {self.vocab_size}"
            )
        return int(self.bits[token])

    def class_counts(self) -> tuple[int, int]:
        """(#tokens with bit 0, #tokens with bit 1)."""
        ones = int(self.bits.sum())
        return self.vocab_size - ones, ones

    def matching_probability(self, position: int) -> float:
        """Null probability that a uniform token matches at ``position``."""
        counts = self.class_counts()
        return counts[position % 2] / self.vocab_size


def _keyed_mix_values(secret: bytes, vocab_size: int) -> np.ndarray:
    if len(secret) > _MAX_BLAKE2_KEY:
        secret = hashlib.blake2b(secret, digest_size=32).digest()
    mixes = np.empty(vocab_size, dtype=np.uint64)
    for token in range(vocab_size):
        digest = hashlib.blake2b(
            token.to_bytes(8, "little"), digest_size=8, key=secret
        ).digest()
        mixes[token] = int.from_bytes(digest, "little")
    return mixes


def build_partition(
    key: WatermarkKey | None, vocab_size: int, mode: str = MODE_KEYED
) -> ParityPartition:
    """Construct the balanced partition for ``vocab_size`` tokens.

    Deterministic in (key bytes, vocab_size, mode). Bit counts differ by at
    most one; they are exactly equal whenever ``vocab_size`` is even. The
    key is only consulted in keyed mode; token-id-mod-2 ignores it.
    """
    if vocab_size < 2:
        raise InvalidVocabularyError(f"vocab_size must be >= 2, got {vocab_size}")
    if mode not in PARTITION_MODES:
        raise ConfigError(f"unknown partition mode {mode!r}; expected one of {PARTITION_MODES}")

    if mode == MODE_TOKEN_ID_MOD_2:
        bits = (np.arange(vocab_size, dtype=np.int64) % 2).astype(np.uint8)
    else:
        if key is None:
            raise ConfigError("keyed partition mode requires a WatermarkKey")
        mixes = _keyed_mix_values(key.secret, vocab_size)
        order = np.lexsort((np.arange(vocab_size), mixes))
        bits = np.empty(vocab_size, dtype=np.uint8)
        bits[order] = (np.arange(vocab_size) % 2).astype(np.uint8)
    return ParityPartition(vocab_size=vocab_size, mode=mode, bits=bits)


def in_matching_set(partition: ParityPartition, position: int, token: int) -> bool:
    """True iff ``token`` belongs to ``G_position``."""
    if position < 0:
        raise ValueError(f"position must be non-negative, got {position}")
    return partition.bit_of(token) == position % 2


def match_bits(partition: ParityPartition, tokens: np.ndarray | list[int]) -> np.ndarray:
    """Vector of m_i = 1[token_i in G_i] over a full response.

    Positions are 0-based response indices; the prompt never enters.
    """
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError("tokens must be one-dimensional")
    if arr.size and (arr.min() < 0 or arr.max() >= partition.vocab_size):
        raise InvalidTokenError("token id outside the partition vocabulary")
    positions = np.arange(arr.size, dtype=np.int64)
    return (partition.bits[arr] == (positions % 2)).astype(np.uint8)


def match_bit_matrix(partition: ParityPartition, tokens: np.ndarray) -> np.ndarray:
    """Row-wise :func:`match_bits` for a (num_sequences, n) token matrix."""
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim != 2:
        raise ValueError("token matrix must be two-dimensional")
    if arr.size and (arr.min() < 0 or arr.max() >= partition.vocab_size):
        raise InvalidTokenError("token id outside the partition vocabulary")
    positions = np.arange(arr.shape[1], dtype=np.int64)
    return (partition.bits[arr] == (positions % 2)[None, :]).astype(np.uint8)
