"""Conditional predictors over partially revealed sequences.

The decoding engine only ever asks one question: given a prompt and the
tokens revealed so far, what is the distribution of the token at each still
masked position? Any object answering that question through
``predict_rows(state, positions)`` can drive decoding. Two toy models are
provided for desk-scale experiments:

* :class:`FactorizedToyModel` ignores context entirely (one fixed
  categorical per position), which makes closed-form analysis possible.
* :class:`ContextMixToyModel` mixes smoothed unigram and left/right bigram
  statistics from a training corpus, so revealing a neighbor genuinely
  changes the answer. It is the order-sensitive stand-in for a real
  any-order language model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import ConfigError, InvalidQueryError, TrainingError

MASKED = -1

# Full distributions must sum to one within this tolerance.
NORMALIZATION_ATOL = 1e-9

# Mixture weights fixed by design so tests are deterministic:
# (left bigram, right bigram, unigram) when both neighbors are revealed,
# (that bigram, unigram) when exactly one is.
WEIGHTS_BOTH = (0.45, 0.45, 0.10)
WEIGHTS_ONE = (0.8, 0.2)


class PartialSequence:
    """Prompt, response length, and the revealed-position map.

    Masked positions are represented as ``MASKED`` in :attr:`tokens`. The
    decode engine mutates instances through :meth:`reveal`/:meth:`unreveal`;
    predictors must treat them as read-only.
    """

    __slots__ = ("prompt", "length", "_tokens")

    def __init__(
        self,
        prompt: Sequence[int],
        length: int,
        revealed: dict[int, int] | None = None,
    ):
        if length < 1:
            raise ConfigError(f"response length must be >= 1, got {length}")
        self.prompt = tuple(int(t) for t in prompt)
        if any(t < 0 for t in self.prompt):
            raise ConfigError("prompt tokens must be non-negative")
        self.length = int(length)
        self._tokens = np.full(self.length, MASKED, dtype=np.int64)
        for pos, tok in (revealed or {}).items():
            self.reveal(int(pos), int(tok))

    @property
    def tokens(self) -> np.ndarray:
        """Read-only length-n view; masked positions hold ``MASKED``."""
        view = self._tokens.view()
        view.setflags(write=False)
        return view

    @property
    def revealed(self) -> dict[int, int]:
        idx = np.flatnonzero(self._tokens != MASKED)
        return {int(i): int(self._tokens[i]) for i in idx}

    def is_revealed(self, position: int) -> bool:
        return bool(self._tokens[position] != MASKED)

    def masked_positions(self) -> np.ndarray:
        return np.flatnonzero(self._tokens == MASKED)

    def reveal(self, position: int, token: int) -> None:
        if not 0 <= position < self.length:
            raise ConfigError(f"position {position} outside response of length {self.length}")
        if token < 0:
            raise ConfigError(f"token must be non-negative, got {token}")
        if self._tokens[position] != MASKED:
            raise InvalidQueryError(f"position {position} is already revealed")
        self._tokens[position] = token

    def unreveal(self, position: int) -> None:
        if self._tokens[position] == MASKED:
            raise InvalidQueryError(f"position {position} is not revealed")
        self._tokens[position] = MASKED

    def snapshot(self) -> tuple:
        """Cheap immutable fingerprint, used by mutation audits in tests."""
        return (self.prompt, self.length, self._tokens.tobytes())


@dataclass(frozen=True)
class PredictiveDistribution:
    """Per-position distribution, sorted by descending probability.

    ``entries`` covers the whole vocabulary when ``truncated`` is False,
    zero-probability tokens included; a truncated instance carries only the
    served top-K and its probabilities are left unrenormalized.
    """

    position: int
    entries: tuple[tuple[int, float], ...]
    truncated: bool = False

    def __post_init__(self) -> None:
        probs = [p for _, p in self.entries]
        if any(p < 0 for p in probs):
            raise ConfigError("probabilities must be non-negative")
        if any(a < b for a, b in zip(probs, probs[1:])):
            raise ConfigError("entries must be sorted by descending probability")
        if not self.truncated and abs(sum(probs) - 1.0) > NORMALIZATION_ATOL:
            raise ConfigError("full distribution must sum to 1 within 1e-9")

    @classmethod
    def from_row(cls, position: int, row: np.ndarray) -> "PredictiveDistribution":
        row = np.asarray(row, dtype=np.float64)
        tokens = np.arange(row.size)
        order = np.lexsort((tokens, -row))
        entries = tuple((int(t), float(row[t])) for t in order)
        return cls(position=position, entries=entries)

    @property
    def coverage(self) -> float:
        """Total served probability mass (1.0 up to rounding when full)."""
        return float(np.sum(np.fromiter((p for _, p in self.entries), dtype=np.float64)))

    def probability_of(self, token: int) -> float:
        for t, p in self.entries:
            if t == token:
                return p
        return 0.0

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """(tokens, probs) reordered by ascending token id."""
        tokens = np.fromiter((t for t, _ in self.entries), dtype=np.int64)
        probs = np.fromiter((p for _, p in self.entries), dtype=np.float64)
        order = np.argsort(tokens)
        return tokens[order], probs[order]


@runtime_checkable
class Predictor(Protocol):
    """Anything that can answer masked-position queries."""

    vocab_size: int

    def predict_rows(self, state: PartialSequence, positions: np.ndarray) -> np.ndarray:
        """Rows of shape (len(positions), vocab_size), one per queried position."""
        ...


def _checked_positions(state: PartialSequence, positions: Iterable[int]) -> np.ndarray:
    pos = np.asarray(sorted(int(p) for p in positions), dtype=np.int64)
    if pos.size == 0:
        raise InvalidQueryError("no positions queried")
    if pos.size and (pos[0] < 0 or pos[-1] >= state.length):
        raise InvalidQueryError("queried position outside the response")
    if np.unique(pos).size != pos.size:
        raise InvalidQueryError("queried positions must be distinct")
    revealed = state.tokens[pos] != MASKED
    if revealed.any():
        bad = int(pos[revealed][0])
        raise InvalidQueryError(f"position {bad} is revealed, not masked")
    return pos


class FactorizedToyModel:
    """Context-free predictor: position i always answers q_i.

    Because the answer never depends on what is revealed, decoding order has
    no effect on the committed token distribution, which is exactly what the
    analytic watermark-lift tests need.
    """

    def __init__(self, per_position: np.ndarray):
        rows = np.asarray(per_position, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ConfigError("per_position must be a (length, vocab) matrix")
        if (rows < 0).any():
            raise ConfigError("probabilities must be non-negative")
        if np.abs(rows.sum(axis=1) - 1.0).max() > NORMALIZATION_ATOL:
            raise ConfigError("each per-position distribution must sum to 1 within 1e-9")
        rows = rows.copy()
        rows.setflags(write=False)
        self._rows = rows
        self.length = rows.shape[0]
        self.vocab_size = rows.shape[1]

    @classmethod
    def uniform(cls, length: int, vocab_size: int) -> "FactorizedToyModel":
        return cls(np.full((length, vocab_size), 1.0 / vocab_size))

    @property
    def per_position(self) -> np.ndarray:
        return self._rows

    def predict_rows(self, state: PartialSequence, positions: np.ndarray) -> np.ndarray:
        pos = _checked_positions(state, positions)
        if state.length != self.length:
            raise ConfigError(
                f"model covers {self.length} positions but state has {state.length}"
            )
        return self._rows[pos].copy()


class ContextMixToyModel:
    """Corpus-count predictor mixing unigram and neighbor-bigram terms.

    The smoothed bigram term for context token c is
    ``(count(c, v) + alpha) / (unigram(c) + alpha * V)``; sequence-final
    tokens contribute no outgoing transition, so a raw term can sum below
    one. The final mixture row is renormalized, which is where the
    distribution invariant is enforced. A bigram term that comes out all
    zero (alpha = 0 and an unseen context) falls back to the unigram term.
    """

    def __init__(
        self,
        unigram: np.ndarray,
        left_bigram: np.ndarray,
        right_bigram: np.ndarray,
        alpha: float,
    ):
        if alpha < 0:
            raise ConfigError(f"smoothing alpha must be >= 0, got {alpha}")
        uni = np.asarray(unigram, dtype=np.int64)
        left = np.asarray(left_bigram, dtype=np.int64)
        right = np.asarray(right_bigram, dtype=np.int64)
        vocab = uni.size
        if left.shape != (vocab, vocab) or right.shape != (vocab, vocab):
            raise ConfigError("bigram tables must be (vocab, vocab)")
        if uni.sum() < 1:
            raise TrainingError("unigram table is empty")
        self.vocab_size = int(vocab)
        self.alpha = float(alpha)
        self.unigram_counts = uni
        self.left_counts = left
        self.right_counts = right

        total = float(uni.sum())
        av = self.alpha * vocab
        self._uni_term = (uni + self.alpha) / (total + av)
        self._left_term = self._smoothed(left, uni, av)
        self._right_term = self._smoothed(right, uni, av)
        for arr in (self._uni_term, self._left_term, self._right_term):
            arr.setflags(write=False)

    def _smoothed(self, table: np.ndarray, uni: np.ndarray, av: float) -> np.ndarray:
        denom = uni.astype(np.float64) + av
        with np.errstate(divide="ignore", invalid="ignore"):
            rows = (table + self.alpha) / denom[:, None]
        bad = ~np.isfinite(rows).all(axis=1)
        rows[bad] = self._uni_term
        dead = rows.sum(axis=1) == 0
        rows[dead] = self._uni_term
        return rows

    def conditional(self, context: int, side: str) -> np.ndarray:
        """Raw smoothed bigram term for one context token ('left'/'right')."""
        table = self._left_term if side == "left" else self._right_term
        return table[context].copy()

    def predict_rows(self, state: PartialSequence, positions: np.ndarray) -> np.ndarray:
        pos = _checked_positions(state, positions)
        tokens = state.tokens
        n = state.length

        left_ctx = np.full(pos.size, MASKED, dtype=np.int64)
        has_prev = pos > 0
        left_ctx[has_prev] = tokens[pos[has_prev] - 1]
        if state.prompt:
            left_ctx[pos == 0] = state.prompt[-1]

        right_ctx = np.full(pos.size, MASKED, dtype=np.int64)
        has_next = pos < n - 1
        right_ctx[has_next] = tokens[pos[has_next] + 1]

        if (left_ctx >= self.vocab_size).any() or (right_ctx >= self.vocab_size).any():
            raise ConfigError("context token outside the model vocabulary")

        rows = np.empty((pos.size, self.vocab_size), dtype=np.float64)
        has_left = left_ctx != MASKED
        has_right = right_ctx != MASKED

        both = has_left & has_right
        if both.any():
            wl, wr, wu = WEIGHTS_BOTH
            rows[both] = (
                wl * self._left_term[left_ctx[both]]
                + wr * self._right_term[right_ctx[both]]
                + wu * self._uni_term
            )
        only_left = has_left & ~has_right
        if only_left.any():
            wb, wu = WEIGHTS_ONE
            rows[only_left] = wb * self._left_term[left_ctx[only_left]] + wu * self._uni_term
        only_right = has_right & ~has_left
        if only_right.any():
            wb, wu = WEIGHTS_ONE
            rows[only_right] = wb * self._right_term[right_ctx[only_right]] + wu * self._uni_term
        neither = ~has_left & ~has_right
        if neither.any():
            rows[neither] = self._uni_term

        rows /= rows.sum(axis=1, keepdims=True)
        return rows


def train_context_mix(corpus: Sequence[Sequence[int]], alpha: float) -> ContextMixToyModel:
    """Count unigrams and adjacent pairs over pre-tokenized sequences.

    The vocabulary is inferred as max token id + 1. ``left_bigram[a, b]``
    counts occurrences of a immediately followed by b; ``right_bigram[c, b]``
    counts b immediately followed by c, i.e. it is indexed by the context
    token first on both sides.
    """
    if alpha < 0:
        raise ConfigError(f"smoothing alpha must be >= 0, got {alpha}")
    sequences = [np.asarray(seq, dtype=np.int64) for seq in corpus]
    if not sequences or all(s.size == 0 for s in sequences):
        raise TrainingError("corpus must hold at least one non-empty sequence")
    if any((s < 0).any() for s in sequences):
        raise TrainingError("corpus tokens must be non-negative")

    vocab = int(max(int(s.max()) for s in sequences if s.size)) + 1
    unigram = np.zeros(vocab, dtype=np.int64)
    left = np.zeros((vocab, vocab), dtype=np.int64)
    right = np.zeros((vocab, vocab), dtype=np.int64)
    for seq in sequences:
        if seq.size == 0:
            continue
        unigram += np.bincount(seq, minlength=vocab)
        if seq.size > 1:
            np.add.at(left, (seq[:-1], seq[1:]), 1)
            np.add.at(right, (seq[1:], seq[:-1]), 1)
    return ContextMixToyModel(unigram, left, right, alpha)


def predict(
    model: Predictor, state: PartialSequence, positions: Iterable[int]
) -> list[PredictiveDistribution]:
    """One distribution per queried masked position, ascending by position.

    Deterministic given (model, state, positions). Querying a revealed
    position raises :class:`InvalidQueryError`.
    """
    pos = _checked_positions(state, positions)
    dists = getattr(model, "predict_dists", None)
    if dists is not None:
        return dists(state, pos)
    rows = model.predict_rows(state, pos)
    return [PredictiveDistribution.from_row(int(p), row) for p, row in zip(pos, rows)]
