"""Independent oracle computations used to freeze expected test values.

Everything here is deliberately primitive: exact rational arithmetic,
explicit enumeration, and O(n*m) loops. Nothing imports the package's
numerical code, so agreement between these routines and the library is
evidence, not tautology.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import Callable, Sequence


def binomial_tail(n: int, g: int) -> Fraction:
    """P(Binomial(n, 1/2) >= g), exactly."""
    if g <= 0:
        return Fraction(1)
    if g > n:
        return Fraction(0)
    favorable = sum(math.comb(n, k) for k in range(g, n + 1))
    return Fraction(favorable, 2**n)


def binomial_tail_float(n: int, g: int) -> float:
    """The tail as a correctly rounded double (big-int division rounds once)."""
    if g <= 0:
        return 1.0
    if g > n:
        return 0.0
    return sum(math.comb(n, k) for k in range(g, n + 1)) / 2**n


def smallest_g_at_fpr(n: int, target: float) -> int:
    """Least g with P(Bin(n, 1/2) >= g) <= target; n+1 if unreachable."""
    for g in range(n + 2):
        if binomial_tail_float(n, g) <= target:
            return g
    raise AssertionError("unreachable")


def uniform_lift_formula(n: int) -> Fraction:
    """Closed form E[G] = n - 1 + 2^(-n) for the uniform independent model."""
    return Fraction(n) - 1 + Fraction(1, 2**n)


def uniform_lift_enumerated(n: int) -> Fraction:
    """E[G] by exhaustive enumeration of per-step candidate parity outcomes.

    With a uniform model and a balanced partition, each unrevealed position's
    candidate matches its parity independently with probability 1/2, redrawn
    every step. A step commits a matching position when any exists (scoring
    1), otherwise a non-matching one (scoring 0). Which position commits does
    not matter: the remainder is exchangeable.
    """

    def expected(remaining: int) -> Fraction:
        if remaining == 0:
            return Fraction(0)
        total = Fraction(0)
        weight = Fraction(1, 2**remaining)
        for outcome in itertools.product((0, 1), repeat=remaining):
            total += weight * (Fraction(max(outcome)) + expected(remaining - 1))
        return total

    return expected(n)


def window_recount(
    bits: Sequence[int], w: int, stride: int = 1
) -> tuple[list[tuple[int, int, float]], float]:
    """(start, G_s, z_s) per window plus z_win, computed with plain loops."""
    n = len(bits)
    stats = []
    total = 0.0
    for start in range(0, n - w + 1, stride):
        g = sum(bits[start : start + w])
        z = (g - w / 2) / math.sqrt(w / 4)
        stats.append((start, g, z))
        total += z * z
    return stats, total / len(stats)


def pairwise_auc(positives: Sequence[float], negatives: Sequence[float]) -> float:
    """Probability a positive outranks a negative, ties at half; O(n*m)."""
    wins = 0.0
    for p in positives:
        for q in negatives:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(positives) * len(negatives))


def tpr_at_fpr_recount(
    positives: Sequence[float], negatives: Sequence[float], level: float
) -> float:
    """TPR at the smallest candidate threshold with empirical FPR <= level.

    Candidates are the negative scores, the overall minimum, and a value
    just above the largest negative.
    """
    candidates = sorted(
        set(negatives)
        | {min(min(positives), min(negatives)), math.nextafter(max(negatives), math.inf)}
    )
    for t in candidates:
        fpr = sum(1 for q in negatives if q >= t) / len(negatives)
        if fpr <= level:
            return sum(1 for p in positives if p >= t) / len(positives)
    raise AssertionError("some threshold always clears FPR 0")


def greedy_candidate(row: Sequence[float]) -> int:
    """Argmax with the lowest token id winning ties, by explicit scan."""
    best, best_p = 0, row[0]
    for tok in range(1, len(row)):
        if row[tok] > best_p:
            best, best_p = tok, row[tok]
    return best


def lookahead_g_recount(
    predict: Callable[[dict[int, int], list[int]], list[Sequence[float]]],
    revealed: dict[int, int],
    pool: list[int],
    committed_position: int,
    parity_bit: Callable[[int], int],
) -> int:
    """Brute-force g for hypothetically committing one position.

    predict maps (revealed map, queried positions) to probability rows.
    The committed position takes its own greedy candidate; the score counts
    how many remaining positions then have parity-matching greedy candidates.
    """
    rows = predict(revealed, pool)
    candidate = greedy_candidate(rows[pool.index(committed_position)])
    hypothetical = dict(revealed)
    hypothetical[committed_position] = candidate
    remaining = [p for p in pool if p != committed_position]
    if not remaining:
        return 0
    next_rows = predict(hypothetical, remaining)
    g = 0
    for pos, row in zip(remaining, next_rows):
        if parity_bit(greedy_candidate(row)) == pos % 2:
            g += 1
    return g


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))
