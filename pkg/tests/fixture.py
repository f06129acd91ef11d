"""Deterministic context-model fixture shared across the test suite.

The corpus is sampled from a first-order Markov chain whose transition
matrix mixes a uniform floor with a peaked move to a fixed successor
permutation. The permutation is one full cycle, so it has no fixed points
and no 2-cycles, and the matrix is doubly stochastic: the stationary
distribution is exactly uniform, which keeps unwatermarked decodes parity
neutral. Everything is a pure function of the constants below.
"""

from __future__ import annotations

import numpy as np

from dgmark import ContextMixToyModel, train_context_mix

FIXTURE_SEED = 911837340
FIXTURE_VOCAB = 64
FIXTURE_SEQUENCES = 240
FIXTURE_LENGTH = 320
FIXTURE_PEAK = 0.75
FIXTURE_ALPHA = 0.05


def chain_matrix(vocab: int, peak: float, rng: np.random.Generator) -> np.ndarray:
    order = rng.permutation(vocab)
    successor = np.empty(vocab, dtype=np.int64)
    successor[order] = order[np.roll(np.arange(vocab), -1)]
    rows = np.full((vocab, vocab), (1.0 - peak) / vocab, dtype=np.float64)
    rows[np.arange(vocab), successor] += peak
    return rows


def sample_corpus(
    vocab: int = FIXTURE_VOCAB,
    sequences: int = FIXTURE_SEQUENCES,
    length: int = FIXTURE_LENGTH,
    peak: float = FIXTURE_PEAK,
    seed: int = FIXTURE_SEED,
) -> list[list[int]]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    rows = chain_matrix(vocab, peak, rng)
    cumulative = rows.cumsum(axis=1)
    corpus = []
    for _ in range(sequences):
        seq = np.empty(length, dtype=np.int64)
        seq[0] = rng.integers(vocab)
        draws = rng.random(length - 1)
        for t in range(1, length):
            seq[t] = np.searchsorted(cumulative[seq[t - 1]], draws[t - 1], side="right")
        corpus.append([int(t) for t in seq])
    return corpus


def fixture_model(alpha: float = FIXTURE_ALPHA, **corpus_kwargs) -> ContextMixToyModel:
    return train_context_mix(sample_corpus(**corpus_kwargs), alpha)
