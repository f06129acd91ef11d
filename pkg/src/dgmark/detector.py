"""Watermark detection from tokens and key alone.

The evidence chain: per-position parity indicators m_i, their sum G, the
standardized z score, an exact binomial p-value, and a sliding-window
aggregate z_win that stays sensitive when insertions or deletions flip
parity downstream of an edit. No model access anywhere in this module.

Balanced partitions (even vocab) get exact big-integer binomial tails;
unbalanced ones use a float convolution of the two per-parity-class
binomials. z_win thresholds always come from Monte Carlo because
overlapping windows are dependent.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .errors import (
    CalibrationInfeasibleError,
    ConfigError,
    InvalidInputError,
    InvalidWindowError,
)
from .partition import ParityPartition, match_bit_matrix, match_bits
from .randomness import stream

NULL_EXACT = "exact-binomial"
NULL_MONTE_CARLO = "monte-carlo"
NULL_MODELS = (NULL_EXACT, NULL_MONTE_CARLO)

STATISTIC_Z = "z"
STATISTIC_Z_WIN = "z_win"

DEFAULT_WINDOW = 8
DEFAULT_STRIDE = 1

# Below this many expected null exceedances a Monte Carlo threshold is noise.
MIN_EXPECTED_EXCEEDANCES = 10


class WindowStat(NamedTuple):
    """One sliding window: start index, match count, standardized score."""

    start: int
    match_count: int
    z: float


@dataclass(frozen=True)
class DetectorConfig:
    """Window geometry plus optional decision thresholds."""

    window: int = DEFAULT_WINDOW
    stride: int = DEFAULT_STRIDE
    z_threshold: float | None = None
    z_win_threshold: float | None = None

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ConfigError(f"window must be positive, got {self.window}")
        if self.stride < 1:
            raise ConfigError(f"stride must be positive, got {self.stride}")


@dataclass(frozen=True)
class DetectionReport:
    """All detection evidence for one sequence."""

    n: int
    match_count: int
    z: float
    p_value: float
    windows: tuple[WindowStat, ...]
    z_win: float
    decisions: dict[str, bool] = field(default_factory=dict)


class CalibratedThreshold(NamedTuple):
    """A decision threshold with its achieved null exceedance rate.

    match_count is the equivalent G cutoff when the statistic admits one
    (exact global calibration), else None.
    """

    threshold: float
    achieved_fpr: float
    match_count: int | None = None


def _class_profile(partition: ParityPartition) -> tuple[int, int, int]:
    zeros, ones = partition.class_counts()
    return zeros, ones, partition.vocab_size


def _position_probs(n: int, zeros: int, ones: int, vocab: int) -> np.ndarray:
    probs = np.empty(n, dtype=np.float64)
    probs[0::2] = zeros / vocab
    probs[1::2] = ones / vocab
    return probs


def _global_null(n: int, zeros: int, ones: int, vocab: int) -> tuple[float, float]:
    """Mean and standard deviation of G under the null."""
    if zeros == ones:
        return n / 2, math.sqrt(n / 4)
    n_even = (n + 1) // 2
    n_odd = n // 2
    p_even = zeros / vocab
    p_odd = ones / vocab
    mean = n_even * p_even + n_odd * p_odd
    var = n_even * p_even * (1 - p_even) + n_odd * p_odd * (1 - p_odd)
    return mean, math.sqrt(var)


@lru_cache(maxsize=64)
def _tail_table(n: int, zeros: int, ones: int, vocab: int) -> np.ndarray:
    """P(G >= g) for g in 0..n+1 under the null.

    Balanced classes: exact big-integer tails of Binomial(n, 1/2), each
    converted with one correctly-rounded division. Unbalanced: float
    convolution of the even-position and odd-position binomials.
    """
    tails = np.empty(n + 2, dtype=np.float64)
    tails[n + 1] = 0.0
    if zeros == ones:
        total = 1 << n
        acc = 0
        for g in range(n, -1, -1):
            acc += math.comb(n, g)
            tails[g] = acc / total
        return tails
    n_even = (n + 1) // 2
    n_odd = n // 2
    pmf_even = stats.binom.pmf(np.arange(n_even + 1), n_even, zeros / vocab)
    pmf_odd = stats.binom.pmf(np.arange(n_odd + 1), n_odd, ones / vocab)
    pmf = np.convolve(pmf_even, pmf_odd)
    tails[:n + 1] = np.cumsum(pmf[::-1])[::-1]
    np.clip(tails, 0.0, 1.0, out=tails)
    return tails


def _checked_tokens(tokens: Sequence[int] | np.ndarray) -> np.ndarray:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInputError("tokens must be a non-empty 1-d sequence")
    return arr


def global_z(
    tokens: Sequence[int] | np.ndarray, partition: ParityPartition
) -> tuple[int, float, float]:
    """Global evidence: (match count G, z score, one-sided exact p-value)."""
    arr = _checked_tokens(tokens)
    g = int(match_bits(partition, arr).sum())
    zeros, ones, vocab = _class_profile(partition)
    mean, sd = _global_null(arr.size, zeros, ones, vocab)
    z = (g - mean) / sd
    p_value = float(_tail_table(arr.size, zeros, ones, vocab)[g])
    return g, z, p_value


def batch_global(
    rows: np.ndarray, partition: ParityPartition
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized global_z over a (num_sequences, n) token matrix."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.ndim != 2 or rows.shape[1] == 0:
        raise InvalidInputError("rows must be a non-empty (sequences, n) matrix")
    counts = match_bit_matrix(partition, rows).sum(axis=1).astype(np.int64)
    zeros, ones, vocab = _class_profile(partition)
    mean, sd = _global_null(rows.shape[1], zeros, ones, vocab)
    z = (counts - mean) / sd
    p_values = _tail_table(rows.shape[1], zeros, ones, vocab)[counts]
    return counts, z, p_values


def _window_null(
    n: int, zeros: int, ones: int, vocab: int, window: int, stride: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    starts = np.arange(0, n - window + 1, stride)
    probs = _position_probs(n, zeros, ones, vocab)
    csum_p = np.concatenate(([0.0], np.cumsum(probs)))
    csum_v = np.concatenate(([0.0], np.cumsum(probs * (1 - probs))))
    means = csum_p[starts + window] - csum_p[starts]
    sds = np.sqrt(csum_v[starts + window] - csum_v[starts])
    return starts, means, sds


def _window_scores(
    bits: np.ndarray, starts: np.ndarray, window: int, means: np.ndarray, sds: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    csum = np.zeros((bits.shape[0], bits.shape[1] + 1), dtype=np.float64)
    np.cumsum(bits, axis=1, out=csum[:, 1:])
    counts = csum[:, starts + window] - csum[:, starts]
    z = (counts - means) / sds
    return counts.astype(np.int64), z


def window_scan(
    tokens: Sequence[int] | np.ndarray,
    partition: ParityPartition,
    config: DetectorConfig = DetectorConfig(),
) -> tuple[list[WindowStat], float]:
    """Dense window statistics and their aggregate z_win = mean of z_s^2."""
    arr = _checked_tokens(tokens)
    if config.window > arr.size:
        raise InvalidWindowError(
            f"window {config.window} exceeds sequence length {arr.size}"
        )
    zeros, ones, vocab = _class_profile(partition)
    starts, means, sds = _window_null(
        arr.size, zeros, ones, vocab, config.window, config.stride
    )
    counts, z = _window_scores(
        match_bits(partition, arr)[None, :], starts, config.window, means, sds
    )
    windows = [
        WindowStat(start=int(s), match_count=int(g), z=float(v))
        for s, g, v in zip(starts, counts[0], z[0])
    ]
    return windows, float(np.mean(z[0] ** 2))


def batch_z_win(
    rows: np.ndarray, partition: ParityPartition, config: DetectorConfig = DetectorConfig()
) -> np.ndarray:
    """Vectorized z_win over a (num_sequences, n) token matrix."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.ndim != 2 or rows.shape[1] == 0:
        raise InvalidInputError("rows must be a non-empty (sequences, n) matrix")
    if config.window > rows.shape[1]:
        raise InvalidWindowError(
            f"window {config.window} exceeds sequence length {rows.shape[1]}"
        )
    zeros, ones, vocab = _class_profile(partition)
    starts, means, sds = _window_null(
        rows.shape[1], zeros, ones, vocab, config.window, config.stride
    )
    _, z = _window_scores(match_bit_matrix(partition, rows), starts, config.window, means, sds)
    return np.mean(z**2, axis=1)


def decide(report: DetectionReport, thresholds: Mapping[str, float]) -> dict[str, bool]:
    """Threshold the report's statistics; boundaries count as detections."""
    out: dict[str, bool] = {}
    for name, cutoff in thresholds.items():
        if name == STATISTIC_Z:
            out[name] = report.z >= cutoff
        elif name == STATISTIC_Z_WIN:
            out[name] = report.z_win >= cutoff
        else:
            raise ConfigError(f"unknown statistic {name!r}")
    return out


def detect(
    tokens: Sequence[int] | np.ndarray,
    partition: ParityPartition,
    config: DetectorConfig = DetectorConfig(),
) -> DetectionReport:
    """Full per-sequence report: global test, window scan, decisions."""
    arr = _checked_tokens(tokens)
    g, z, p_value = global_z(arr, partition)
    windows, z_win = window_scan(arr, partition, config)
    report = DetectionReport(
        n=arr.size,
        match_count=g,
        z=z,
        p_value=p_value,
        windows=tuple(windows),
        z_win=z_win,
    )
    thresholds: dict[str, float] = {}
    if config.z_threshold is not None:
        thresholds[STATISTIC_Z] = config.z_threshold
    if config.z_win_threshold is not None:
        thresholds[STATISTIC_Z_WIN] = config.z_win_threshold
    report.decisions.update(decide(report, thresholds))
    return report


def _mc_threshold(samples: np.ndarray, target_fpr: float) -> tuple[float, float]:
    """Smallest observed value whose exceedance fraction is within target.

    With zero allowed exceedances the threshold lands one ulp above the
    sample maximum.
    """
    size = samples.size
    allowed = math.floor(target_fpr * size)
    ordered = np.sort(samples)
    candidates = np.unique(ordered)
    exceed = size - np.searchsorted(ordered, candidates, side="left")
    feasible = np.flatnonzero(exceed <= allowed)
    if feasible.size:
        i = int(feasible[0])
        return float(candidates[i]), float(exceed[i] / size)
    return float(np.nextafter(candidates[-1], np.inf)), 0.0


def _simulate_bits(
    rng: np.random.Generator, count: int, probs: np.ndarray
) -> np.ndarray:
    return (rng.random((count, probs.size)) < probs).astype(np.uint8)


def calibrate(
    null_model: str,
    statistic: str,
    n: int,
    target_fpr: float,
    *,
    partition: ParityPartition | None = None,
    config: DetectorConfig = DetectorConfig(),
    num_sequences: int = 100_000,
    seed: int = 0,
) -> CalibratedThreshold:
    """Pick the smallest threshold whose null exceedance is within target_fpr.

    exact-binomial applies to the global statistic only and walks the exact
    tail table. monte-carlo simulates i.i.d. parity bits (full sequences for
    z_win, whose overlapping windows have no usable closed form). A balanced
    partition is assumed when none is given.
    """
    if null_model not in NULL_MODELS:
        raise ConfigError(f"unknown null model {null_model!r}")
    if not 0 < target_fpr <= 0.5:
        raise ConfigError(f"target_fpr must lie in (0, 0.5], got {target_fpr}")
    if n < 1:
        raise ConfigError(f"n must be positive, got {n}")
    zeros, ones, vocab = (1, 1, 2) if partition is None else _class_profile(partition)

    if statistic == STATISTIC_Z:
        mean, sd = _global_null(n, zeros, ones, vocab)
        if null_model == NULL_EXACT:
            tails = _tail_table(n, zeros, ones, vocab)
            feasible = np.flatnonzero(tails[: n + 1] <= target_fpr)
            if feasible.size == 0:
                raise CalibrationInfeasibleError(
                    f"target_fpr {target_fpr} unreachable at n={n}; "
                    f"the all-match tail is already {float(tails[n]):.3g}",
                    floor=float(tails[n]),
                )
            g_star = int(feasible[0])
            return CalibratedThreshold(
                threshold=(g_star - mean) / sd,
                achieved_fpr=float(tails[g_star]),
                match_count=g_star,
            )
        rng = stream(seed, "calibrate", statistic)
        probs = _position_probs(n, zeros, ones, vocab)
        if target_fpr * num_sequences < MIN_EXPECTED_EXCEEDANCES:
            warnings.warn(
                f"fewer than {MIN_EXPECTED_EXCEEDANCES} expected null exceedances; "
                "the Monte Carlo threshold will be noisy",
                RuntimeWarning,
                stacklevel=2,
            )
        counts = np.empty(num_sequences, dtype=np.int64)
        done = 0
        chunk = max(1, (1 << 22) // max(n, 1))
        while done < num_sequences:
            take = min(chunk, num_sequences - done)
            counts[done : done + take] = _simulate_bits(rng, take, probs).sum(axis=1)
            done += take
        # z is monotone in G, so threshold over integer counts and map back.
        g_thr, achieved = _mc_threshold(counts.astype(np.float64), target_fpr)
        return CalibratedThreshold(threshold=(g_thr - mean) / sd, achieved_fpr=achieved)

    if statistic == STATISTIC_Z_WIN:
        if null_model == NULL_EXACT:
            raise ConfigError(
                "z_win has no exact null (overlapping windows); use monte-carlo"
            )
        if config.window > n:
            raise InvalidWindowError(f"window {config.window} exceeds n {n}")
        if target_fpr * num_sequences < MIN_EXPECTED_EXCEEDANCES:
            warnings.warn(
                f"fewer than {MIN_EXPECTED_EXCEEDANCES} expected null exceedances; "
                "the Monte Carlo threshold will be noisy",
                RuntimeWarning,
                stacklevel=2,
            )
        rng = stream(seed, "calibrate", statistic)
        probs = _position_probs(n, zeros, ones, vocab)
        starts, means, sds = _window_null(n, zeros, ones, vocab, config.window, config.stride)
        samples = np.empty(num_sequences, dtype=np.float64)
        done = 0
        chunk = max(1, (1 << 22) // max(n, 1))
        while done < num_sequences:
            take = min(chunk, num_sequences - done)
            bits = _simulate_bits(rng, take, probs)
            _, z = _window_scores(bits, starts, config.window, means, sds)
            samples[done : done + take] = np.mean(z**2, axis=1)
            done += take
        threshold, achieved = _mc_threshold(samples, target_fpr)
        return CalibratedThreshold(threshold=threshold, achieved_fpr=achieved)

    raise ConfigError(f"unknown statistic {statistic!r}")
