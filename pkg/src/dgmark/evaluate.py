"""Score aggregation: confusion rates, TPR at fixed FPR, ROC/AUC, histograms.

Everything here is empirical. TPR@FPR thresholds are taken from the
observed negative scores (never interpolated or fit), and under-resolved
levels raise a warning instead of silently extrapolating: the 0.01% column
needs at least ten thousand negatives to mean anything.

Perplexity is intentionally absent; it needs an oracle language model. Use
join_ppl to merge externally computed values into report records by id.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, InvalidInputError

TPR_AT_FPR_LEVELS = (0.10, 0.01, 0.001, 0.0001)

# Empirical FPR below 10/len(negatives) is resolution noise, not signal.
MIN_NEGATIVES_PER_LEVEL = 10


@dataclass(frozen=True)
class ScoreSet:
    """Detection statistics split by ground truth."""

    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "positives", np.asarray(self.positives, dtype=np.float64).ravel()
        )
        object.__setattr__(
            self, "negatives", np.asarray(self.negatives, dtype=np.float64).ravel()
        )


class ConfusionRates(NamedTuple):
    fpr: float
    tnr: float
    tpr: float
    fnr: float


class Histogram(NamedTuple):
    """Binned window match ratios, CSV-ready."""

    edges: np.ndarray
    counts: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("bin_left,bin_right,count\n")
        for left, right, count in zip(self.edges[:-1], self.edges[1:], self.counts):
            buf.write(f"{left!r},{right!r},{int(count)}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class EvalReport:
    """One evaluation run: confusions per threshold, TPR@FPR, AUC, histogram."""

    confusions: tuple[tuple[float, ConfusionRates], ...]
    tpr_at_fpr: dict[float, float]
    auc: float
    histogram: Histogram | None = field(default=None)


def _both_sides(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray]:
    if scores.positives.size == 0 or scores.negatives.size == 0:
        raise InvalidInputError("both positives and negatives must be non-empty")
    return scores.positives, scores.negatives


def confusion(scores: ScoreSet, threshold: float) -> ConfusionRates:
    """Empirical rates at one cut; scores equal to the threshold count as hits."""
    if not math.isfinite(threshold):
        raise ConfigError(f"threshold must be finite, got {threshold}")
    pos, neg = _both_sides(scores)
    tpr = float(np.mean(pos >= threshold))
    fpr = float(np.mean(neg >= threshold))
    return ConfusionRates(fpr=fpr, tnr=1.0 - fpr, tpr=tpr, fnr=1.0 - tpr)


def tpr_at_fpr(
    scores: ScoreSet, levels: Sequence[float] = TPR_AT_FPR_LEVELS
) -> list[float]:
    """TPR at the smallest observed threshold whose empirical FPR fits each level.

    Candidate thresholds are the negative scores themselves, the overall
    minimum (so a level of 1.0 can admit everything), and one ulp above the
    largest negative (the zero-FPR cut).
    """
    pos, neg = _both_sides(scores)
    for level in levels:
        if not 0.0 < level <= 1.0:
            raise ConfigError(f"levels must lie in (0, 1], got {level}")
        if neg.size * level < MIN_NEGATIVES_PER_LEVEL:
            warnings.warn(
                f"level {level} is under-resolved with {neg.size} negatives; "
                f"need at least {math.ceil(MIN_NEGATIVES_PER_LEVEL / level)}",
                RuntimeWarning,
                stacklevel=2,
            )
    floor = min(pos.min(), neg.min())
    candidates = np.unique(np.concatenate((neg, [floor, np.nextafter(neg.max(), np.inf)])))
    sorted_neg = np.sort(neg)
    fprs = (neg.size - np.searchsorted(sorted_neg, candidates, side="left")) / neg.size
    out = []
    for level in levels:
        feasible = np.flatnonzero(fprs <= level)
        threshold = float(candidates[feasible[0]])
        out.append(float(np.mean(pos >= threshold)))
    return out


def roc_auc(scores: ScoreSet) -> float:
    """Probability a random positive outranks a random negative; ties count half."""
    pos, neg = _both_sides(scores)
    ranks = stats.rankdata(np.concatenate((pos, neg)))
    rank_sum = ranks[: pos.size].sum()
    u = rank_sum - pos.size * (pos.size + 1) / 2
    return float(u / (pos.size * neg.size))


def roc_points(scores: ScoreSet) -> list[tuple[float, float, float]]:
    """(threshold, FPR, TPR) at every distinct score, high cuts first."""
    pos, neg = _both_sides(scores)
    cuts = np.unique(np.concatenate((pos, neg)))[::-1]
    sorted_pos = np.sort(pos)
    sorted_neg = np.sort(neg)
    points = []
    for cut in cuts:
        tpr = (pos.size - np.searchsorted(sorted_pos, cut, side="left")) / pos.size
        fpr = (neg.size - np.searchsorted(sorted_neg, cut, side="left")) / neg.size
        points.append((float(cut), float(fpr), float(tpr)))
    return points


def match_ratio_histogram(ratios: Iterable[float], bins: int = 10) -> Histogram:
    """Bin window match ratios G_s / w over [0, 1]; the top bin includes 1."""
    values = np.fromiter((float(r) for r in ratios), dtype=np.float64)
    if values.size == 0:
        raise InvalidInputError("no window ratios to bin")
    if bins < 1:
        raise ConfigError(f"bins must be positive, got {bins}")
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return Histogram(edges=edges, counts=counts)


def evaluate_scores(
    scores: ScoreSet,
    thresholds: Sequence[float] = (),
    levels: Sequence[float] = TPR_AT_FPR_LEVELS,
    ratios: Iterable[float] | None = None,
    bins: int = 10,
) -> EvalReport:
    """Bundle the full metric set into one report."""
    confusions = tuple((float(t), confusion(scores, t)) for t in thresholds)
    tprs = tpr_at_fpr(scores, levels)
    return EvalReport(
        confusions=confusions,
        tpr_at_fpr={float(level): tpr for level, tpr in zip(levels, tprs)},
        auc=roc_auc(scores),
        histogram=None if ratios is None else match_ratio_histogram(ratios, bins),
    )


def join_ppl(
    records: Iterable[Mapping[str, object]], ppl_by_id: Mapping[str, float]
) -> list[dict[str, object]]:
    """Merge externally computed perplexities into report records by id.

    Records without a perplexity entry pass through unchanged; this is the
    integration point for fluency numbers produced by an outside language
    model.
    """
    out = []
    for record in records:
        merged = dict(record)
        key = merged.get("id")
        if isinstance(key, str) and key in ppl_by_id:
            merged["ppl"] = float(ppl_by_id[key])
        out.append(merged)
    return out
