"""JSONL record shapes shared by the pipeline stages.

Key orders are fixed and serialization is compact, so identical runs
produce byte-identical files. Floats go through json's shortest-repr
formatting, which round-trips exactly.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .attack import AttackSpec
from .decoder import DecodeConfig, DecodeTrace
from .detector import DetectionReport
from .errors import InvalidInputError


def decode_record(
    record_id: str,
    mode: str,
    config: DecodeConfig,
    tokens: np.ndarray,
    trace: DecodeTrace,
) -> dict:
    return {
        "id": record_id,
        "mode": mode,
        "k": config.beam,
        "block_size": config.block_size,
        "seed": config.seed,
        "tokens": [int(t) for t in tokens],
        "order": [int(p) for p in trace.order],
        "fallback_steps": sorted(int(s) for s in trace.fallback_steps),
    }


def attack_record(record: Mapping, attacked_tokens: np.ndarray, spec: AttackSpec) -> dict:
    """Mirror a decode record with edited tokens and the attack stamp."""
    out = dict(record)
    out["tokens"] = [int(t) for t in attacked_tokens]
    out["attack"] = {"kind": spec.kind, "epsilon": spec.epsilon, "seed": spec.seed}
    return out


def report_record(record_id: str, report: DetectionReport) -> dict:
    return {
        "id": record_id,
        "n": report.n,
        "G": report.match_count,
        "z": report.z,
        "p_value": report.p_value,
        "z_win": report.z_win,
        "decisions": dict(report.decisions),
    }


def write_jsonl(path: str | Path, records: Iterable[Mapping]) -> int:
    """Write records one per line; returns how many were written."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record, separators=(",", ":")))
            fh.write("\n")
            count += 1
    return count


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
    return out


def record_tokens(record: Mapping) -> np.ndarray:
    tokens = record.get("tokens")
    if not isinstance(tokens, Sequence) or isinstance(tokens, (str, bytes)) or not tokens:
        raise InvalidInputError(f"record {record.get('id')!r} has no usable tokens field")
    return np.asarray(tokens, dtype=np.int64)
