"""Reward/candidate rules that drive the unmasking order.

A strategy looks at the predictive distribution of every still-masked
position and returns, per position, a candidate token and a scalar reward;
the engine commits the highest-reward position each step. Four reward kinds
are provided (random, confidence, entropy, margin) with greedy or
multinomial candidate selection.

The hard requirement throughout: strategies never alter the predictor's
probabilities. ``candidate_prob`` is always the value the predictor
reported for the chosen token, bit for bit; temperature scaling affects
only which token gets sampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, TruncationError
from .predictor import PredictiveDistribution

KIND_RANDOM = "random"
KIND_CONFIDENCE = "confidence"
KIND_ENTROPY = "entropy"
KIND_MARGIN = "margin"
STRATEGY_KINDS = (KIND_RANDOM, KIND_CONFIDENCE, KIND_ENTROPY, KIND_MARGIN)

SELECTION_GREEDY = "greedy"
SELECTION_MULTINOMIAL = "multinomial"
SELECTIONS = (SELECTION_GREEDY, SELECTION_MULTINOMIAL)

# Entropy needs (nearly) full support; truncated distributions are accepted
# only when the served mass reaches this coverage.
ENTROPY_MIN_COVERAGE = 0.999


@dataclass(frozen=True)
class StrategySpec:
    """Which reward rule to use and how candidates are drawn."""

    kind: str
    selection: str = SELECTION_GREEDY
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        if self.selection not in SELECTIONS:
            raise ConfigError(f"unknown selection {self.selection!r}")
        if self.kind == KIND_MARGIN and self.selection != SELECTION_GREEDY:
            raise ConfigError("margin strategy requires greedy selection")
        if not (math.isfinite(self.temperature) and self.temperature > 0):
            raise ConfigError(f"temperature must be positive and finite, got {self.temperature}")


@dataclass(frozen=True)
class Proposal:
    """One position's (reward, candidate) answer from the strategy."""

    position: int
    reward: float
    candidate: int
    candidate_prob: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.candidate_prob <= 1.0:
            raise ConfigError(f"candidate_prob must lie in [0, 1], got {self.candidate_prob}")


class RowProposals(NamedTuple):
    """Vectorized proposal arrays aligned with the input row order."""

    rewards: np.ndarray
    candidates: np.ndarray
    candidate_probs: np.ndarray


def _last_positive_index(rows: np.ndarray) -> np.ndarray:
    width = rows.shape[1]
    return width - 1 - np.argmax(rows[:, ::-1] > 0, axis=1)


def _sample_candidates(
    spec: StrategySpec, rows: np.ndarray, rng: np.random.Generator, truncated: np.ndarray
) -> np.ndarray:
    """Inverse-CDF sampling over ascending token ids, one draw per row.

    Zero-probability tokens are never selected: the pick index is clipped to
    the last positive entry, which also absorbs the (measure ~1 ulp) event
    of a draw landing beyond the accumulated mass. Truncated rows scale the
    draw by their covered mass, which is renormalization without touching
    the stored probabilities.
    """
    probs = rows
    u = rng.random(rows.shape[0])
    if spec.temperature != 1.0:
        scaled = rows ** (1.0 / spec.temperature)
        scaled /= scaled.sum(axis=1, keepdims=True)
        probs = scaled
    elif truncated.any():
        u = u.copy()
        u[truncated] *= rows[truncated].sum(axis=1)
    cum = np.cumsum(probs, axis=1)
    picks = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(picks, _last_positive_index(probs))


def _entropy_rewards(rows: np.ndarray, truncated: np.ndarray) -> np.ndarray:
    if truncated.any():
        coverage = rows[truncated].sum(axis=1)
        if (coverage < ENTROPY_MIN_COVERAGE).any():
            raise TruncationError(
                "entropy is undefined on truncated support "
                f"(coverage below {ENTROPY_MIN_COVERAGE})"
            )
    positive = rows > 0
    plogp = np.where(positive, rows * np.log(np.where(positive, rows, 1.0)), 0.0)
    return plogp.sum(axis=1)


def _margin_rewards(rows: np.ndarray) -> np.ndarray:
    if rows.shape[1] < 2:
        return rows[:, 0].copy()
    top_two = np.partition(rows, rows.shape[1] - 2, axis=1)[:, -2:]
    return top_two[:, 1] - top_two[:, 0]


def propose_rows(
    spec: StrategySpec,
    rows: np.ndarray,
    rng: np.random.Generator,
    truncated: np.ndarray | bool = False,
) -> RowProposals:
    """Strategy kernel over a (num_positions, vocab) probability matrix.

    Rows must be in ascending-position order; random draws are consumed in
    that order, candidates first (multinomial selection only) and then
    rewards (random kind only). Greedy selection with a non-random kind
    consumes no randomness at all.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ConfigError("rows must be a non-empty (positions, vocab) matrix")
    truncated = np.broadcast_to(np.asarray(truncated, dtype=bool), (rows.shape[0],))

    if spec.selection == SELECTION_GREEDY:
        candidates = np.argmax(rows, axis=1)
    else:
        candidates = _sample_candidates(spec, rows, rng, truncated)
    index = np.arange(rows.shape[0])
    candidate_probs = rows[index, candidates]

    if spec.kind == KIND_RANDOM:
        rewards = rng.random(rows.shape[0])
    elif spec.kind == KIND_CONFIDENCE:
        rewards = candidate_probs.copy()
    elif spec.kind == KIND_ENTROPY:
        rewards = _entropy_rewards(rows, truncated)
    else:
        rewards = _margin_rewards(rows)
    return RowProposals(rewards=rewards, candidates=candidates, candidate_probs=candidate_probs)


def propose(
    spec: StrategySpec,
    dists: Sequence[PredictiveDistribution],
    rng: np.random.Generator,
) -> list[Proposal]:
    """Apply the strategy to a batch of predictive distributions.

    Distributions are processed in the order given; callers that care about
    reproducibility should pass them in ascending position order. Full
    distributions reproduce the row kernel bit for bit.
    """
    if not dists:
        raise ConfigError("dists must be non-empty")
    width = 0
    supports = []
    for dist in dists:
        tokens, probs = dist.support()
        supports.append((tokens, probs))
        width = max(width, int(tokens[-1]) + 1 if tokens.size else 1)
    rows = np.zeros((len(dists), width), dtype=np.float64)
    for i, (tokens, probs) in enumerate(supports):
        rows[i, tokens] = probs
    truncated = np.fromiter((d.truncated for d in dists), dtype=bool, count=len(dists))

    result = propose_rows(spec, rows, rng, truncated)
    return [
        Proposal(
            position=dist.position,
            reward=float(result.rewards[i]),
            candidate=int(result.candidates[i]),
            candidate_prob=float(result.candidate_probs[i]),
        )
        for i, dist in enumerate(dists)
    ]
