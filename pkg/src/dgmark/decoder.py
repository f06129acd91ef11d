"""Decoding procedures: plain, parity-steered, and top-k lookahead.

All variants share one engine. Each step queries the predictor on the
still-masked positions of the active block, asks the strategy for a
(reward, candidate) pair per position, and commits exactly one position.
The parity-steered variant restricts the commit to positions whose
candidate lands in its matching set, falling back to all unrevealed
positions when none does; probabilities are never modified, only the
order of commits changes.

Randomness discipline: one PCG64 substream per decode, consumed in a
fixed order (per step, one draw per unrevealed position in ascending
position order, candidates before rewards). Lookahead rollouts draw from
forked streams that are discarded, so beam width never perturbs the main
stream and beam=1 is byte-identical to the standard parity-steered
decoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DecodeError
from .partition import ParityPartition, match_bits as _parity_match_bits
from .predictor import MASKED, PartialSequence, Predictor
from .randomness import MAX_SEED, stream
from .strategy import StrategySpec, propose_rows

MODE_PLAIN = "plain"
MODE_DGMARK = "dgmark"
MODE_LOOKAHEAD = "lookahead"
DECODE_MODES = (MODE_PLAIN, MODE_DGMARK, MODE_LOOKAHEAD)


@dataclass(frozen=True)
class DecodeConfig:
    """Shape of one decode: length, blocking, beam width, strategy, seed."""

    length: int
    strategy: StrategySpec
    seed: int
    block_size: int | None = None
    beam: int = 1

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ConfigError(f"length must be positive, got {self.length}")
        if self.block_size is None:
            object.__setattr__(self, "block_size", self.length)
        if not 1 <= self.block_size <= self.length:
            raise ConfigError(f"block_size must lie in [1, length], got {self.block_size}")
        if self.length % self.block_size != 0:
            raise ConfigError(
                f"length {self.length} is not divisible by block_size {self.block_size}"
            )
        if self.beam < 1:
            raise ConfigError(f"beam must be >= 1, got {self.beam}")
        if not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


class LookaheadRecord(NamedTuple):
    """Rollout scores for one step: (position, next-step match count) per entry."""

    step: int
    scores: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class DecodeTrace:
    """Everything observable about one decode besides the tokens.

    order is the realized commit permutation; fallback_steps the steps where
    no candidate matched parity; match_bits the final per-position parity
    indicators (None without a partition); candidate_set_sizes the size of
    the commit pool actually maximized over at each step (after fallback
    substitution); predictor_call_log one (position, candidate,
    candidate_prob) triple per committed step. lookahead_log is populated
    only for steps where rollouts actually ran.
    """

    order: np.ndarray
    fallback_steps: frozenset[int]
    match_bits: np.ndarray | None
    candidate_set_sizes: tuple[int, ...]
    predictor_call_log: tuple[tuple[int, int, float], ...]
    lookahead_log: tuple[LookaheadRecord, ...] = field(default=())


def _checked_prompt(model: Predictor, prompt: Sequence[int]) -> tuple[int, ...]:
    out = tuple(int(t) for t in prompt)
    for tok in out:
        if not 0 <= tok < model.vocab_size:
            raise ConfigError(f"prompt token {tok} outside vocab of size {model.vocab_size}")
    return out


def _checked_partition(model: Predictor, partition: ParityPartition) -> ParityPartition:
    if partition.vocab_size != model.vocab_size:
        raise ConfigError(
            f"partition vocab {partition.vocab_size} != model vocab {model.vocab_size}"
        )
    return partition


def _predict(
    model: Predictor, state: PartialSequence, positions: np.ndarray, step: int
) -> np.ndarray:
    try:
        rows = np.asarray(model.predict_rows(state, positions), dtype=np.float64)
    except Exception as exc:
        raise DecodeError(f"predictor failed at step {step}: {exc}", step=step) from exc
    if rows.shape != (positions.size, model.vocab_size):
        raise DecodeError(
            f"predictor returned shape {rows.shape}, "
            f"expected {(positions.size, model.vocab_size)}",
            step=step,
        )
    return rows


def _decode(
    model: Predictor,
    config: DecodeConfig,
    prompt: Sequence[int],
    partition: ParityPartition | None,
    mode: str,
    block_size: int,
) -> tuple[np.ndarray, DecodeTrace]:
    prompt = _checked_prompt(model, prompt)
    state = PartialSequence(prompt, config.length)
    main = stream(config.seed, "decode")
    truncated = bool(getattr(model, "truncated_rows", False))
    bits = partition.bits if partition is not None else None

    order: list[int] = []
    sizes: list[int] = []
    call_log: list[tuple[int, int, float]] = []
    fallback: set[int] = set()
    lookahead: list[LookaheadRecord] = []
    fork_counter = 0
    step = 0

    for start in range(0, config.length, block_size):
        block = np.arange(start, start + block_size)
        while True:
            pool = block[state.tokens[block] == MASKED]
            if pool.size == 0:
                break
            rows = _predict(model, state, pool, step)
            props = propose_rows(config.strategy, rows, main, truncated)

            if bits is None:
                sel = np.arange(pool.size)
            else:
                matching = bits[props.candidates] == (pool % 2)
                if matching.any():
                    sel = np.flatnonzero(matching)
                else:
                    fallback.add(step)
                    sel = np.arange(pool.size)
            chosen = pool[sel]
            rewards = props.rewards[sel]
            cands = props.candidates[sel]
            probs = props.candidate_probs[sel]
            sizes.append(int(chosen.size))

            pick = int(np.argmax(rewards))
            if mode == MODE_LOOKAHEAD and chosen.size > 1:
                top = np.lexsort((chosen, -rewards))[: min(config.beam, chosen.size)]
                if top.size > 1:
                    scores: list[int] = []
                    for ti in top:
                        state.reveal(int(chosen[ti]), int(cands[ti]))
                        remaining = block[state.tokens[block] == MASKED]
                        if remaining.size:
                            roll_rows = _predict(model, state, remaining, step)
                            fork = stream(config.seed, "lookahead", fork_counter)
                            fork_counter += 1
                            roll = propose_rows(config.strategy, roll_rows, fork, truncated)
                            g = int((bits[roll.candidates] == (remaining % 2)).sum())
                        else:
                            g = 0
                        scores.append(g)
                        state.unreveal(int(chosen[ti]))
                    # top is ordered by (reward desc, position asc), so the first
                    # maximum implements the g > r > position tie-break chain.
                    pick = int(top[int(np.argmax(np.asarray(scores)))])
                    lookahead.append(
                        LookaheadRecord(
                            step=step,
                            scores=tuple(
                                (int(chosen[t]), scores[i]) for i, t in enumerate(top)
                            ),
                        )
                    )
                else:
                    pick = int(top[0])

            position = int(chosen[pick])
            candidate = int(cands[pick])
            state.reveal(position, candidate)
            order.append(position)
            call_log.append((position, candidate, float(probs[pick])))
            step += 1

    tokens = state.tokens.copy()
    bits_out = _parity_match_bits(partition, tokens) if partition is not None else None
    trace = DecodeTrace(
        order=np.asarray(order, dtype=np.int64),
        fallback_steps=frozenset(fallback),
        match_bits=bits_out,
        candidate_set_sizes=tuple(sizes),
        predictor_call_log=tuple(call_log),
        lookahead_log=tuple(lookahead),
    )
    return tokens, trace


def decode_plain(
    model: Predictor, config: DecodeConfig, prompt: Sequence[int] = ()
) -> tuple[np.ndarray, DecodeTrace]:
    """Unwatermarked decoding: commit the max-reward unrevealed position each step."""
    return _decode(model, config, prompt, None, MODE_PLAIN, config.length)


def decode_watermarked(
    model: Predictor,
    config: DecodeConfig,
    prompt: Sequence[int],
    partition: ParityPartition,
) -> tuple[np.ndarray, DecodeTrace]:
    """Parity-steered decoding restricted to matching candidates, beam 1."""
    if config.beam != 1:
        raise ConfigError(f"watermarked decoding requires beam=1, got {config.beam}")
    _checked_partition(model, partition)
    return _decode(model, config, prompt, partition, MODE_DGMARK, config.length)


def decode_lookahead(
    model: Predictor,
    config: DecodeConfig,
    prompt: Sequence[int],
    partition: ParityPartition,
) -> tuple[np.ndarray, DecodeTrace]:
    """Parity-steered decoding where the top-k pool positions by reward are
    each scored by a hypothetical one-step rollout (count of next-step parity
    matches) and the best rollout wins. beam=1 reduces to decode_watermarked.
    """
    _checked_partition(model, partition)
    return _decode(model, config, prompt, partition, MODE_LOOKAHEAD, config.length)


def decode_blockwise(
    model: Predictor,
    config: DecodeConfig,
    prompt: Sequence[int] = (),
    partition: ParityPartition | None = None,
    mode: str | None = None,
) -> tuple[np.ndarray, DecodeTrace]:
    """Decode config.block_size-sized blocks left to right.

    Within a block the commit pool is restricted to that block's positions;
    completed blocks are revealed context. Parity still keys off global
    response indices. When mode is None the variant is inferred: no
    partition means plain, beam 1 means standard parity steering, beam > 1
    means lookahead.
    """
    if mode is None:
        if partition is None:
            mode = MODE_PLAIN
        else:
            mode = MODE_DGMARK if config.beam == 1 else MODE_LOOKAHEAD
    if mode not in DECODE_MODES:
        raise ConfigError(f"unknown decode mode {mode!r}")
    if mode == MODE_PLAIN:
        partition = None
    elif partition is None:
        raise ConfigError(f"mode {mode!r} requires a partition")
    else:
        _checked_partition(model, partition)
    return _decode(model, config, prompt, partition, mode, config.block_size)


def audit_no_reweighting(
    model: Predictor, trace: DecodeTrace, prompt: Sequence[int] = ()
) -> None:
    """Replay a trace against the model and demand exact probability equality.

    For every committed step, the candidate probability recorded in the trace
    must equal, bit for bit, what the predictor reports for that token in the
    reconstructed partial state. Raises DecodeError at the first mismatch.
    """
    state = PartialSequence(_checked_prompt(model, prompt), len(trace.order))
    for step, (position, candidate, prob) in enumerate(trace.predictor_call_log):
        rows = _predict(model, state, np.asarray([position], dtype=np.int64), step)
        reported = float(rows[0, candidate])
        if reported != prob:
            raise DecodeError(
                f"probability mismatch at step {step}: trace has {prob!r}, "
                f"predictor reports {reported!r}",
                step=step,
            )
        state.reveal(position, candidate)
