"""Client for predictor servers speaking newline-delimited JSON over stdio.

The server is any subprocess that answers {"op": "meta"} and
{"op": "predict"} frames; requests and responses are matched by id. The
client exposes the same predict_rows surface as the in-process toy models,
so the decoder cannot tell the difference: with a full-vocab top_k the
decode is byte-identical to running the same distributions in process.

Truncated serving (top_k below the vocab) keeps the raw probabilities as
reported; renormalization happens at sampling time in the strategy layer,
and the entropy strategy refuses coverage below its floor there.
"""

from __future__ import annotations

import json
import subprocess
from typing import Sequence

import numpy as np

from .errors import BridgeError, ConfigError
from .predictor import PartialSequence, PredictiveDistribution, _checked_positions

DEFAULT_TOP_K = 64


class BridgePredictor:
    """Spawn a predictor server and proxy predict_rows to it."""

    def __init__(self, argv: Sequence[str], top_k: int = DEFAULT_TOP_K):
        if top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {top_k}")
        self.top_k = top_k
        self._next_id = 0
        try:
            self._proc = subprocess.Popen(
                list(argv),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise BridgeError(f"cannot spawn bridge server {argv!r}: {exc}") from exc
        meta = self._roundtrip({"op": "meta"}).get("meta")
        if not isinstance(meta, dict) or "vocab_size" not in meta:
            raise BridgeError(f"meta handshake missing vocab_size: {meta!r}")
        self.vocab_size = int(meta["vocab_size"])
        self.model_name = str(meta.get("name", ""))
        if self.vocab_size < 2:
            raise BridgeError(f"server reports vocab_size {self.vocab_size}")

    # The decoder consults this to decide whether rows need coverage handling.
    @property
    def truncated_rows(self) -> bool:
        return self.top_k < self.vocab_size

    def _roundtrip(self, frame: dict) -> dict:
        frame = dict(frame)
        frame["id"] = f"q{self._next_id}"
        self._next_id += 1
        if self._proc.poll() is not None:
            raise BridgeError("bridge server has exited")
        assert self._proc.stdin is not None and self._proc.stdout is not None
        try:
            self._proc.stdin.write(json.dumps(frame, separators=(",", ":")) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError(f"bridge server pipe broken: {exc}") from exc
        while True:
            line = self._proc.stdout.readline()
            if not line:
                raise BridgeError("bridge server closed its stdout")
            try:
                response = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BridgeError(f"unparseable bridge frame: {line!r}") from exc
            if response.get("id") != frame["id"]:
                continue
            if not response.get("ok"):
                raise BridgeError(f"bridge error: {response.get('error')!r}")
            return response

    def _predict_frames(
        self, state: PartialSequence, positions: np.ndarray
    ) -> list[dict]:
        revealed = sorted(state.revealed.items())
        response = self._roundtrip(
            {
                "op": "predict",
                "prompt": [int(t) for t in state.prompt],
                "n": state.length,
                "revealed": [[int(p), int(t)] for p, t in revealed],
                "positions": [int(p) for p in positions],
                "top_k": self.top_k,
            }
        )
        dists = response.get("dists")
        if not isinstance(dists, list) or len(dists) != positions.size:
            raise BridgeError(
                f"expected {positions.size} dists, got {type(dists).__name__} "
                f"of length {len(dists) if isinstance(dists, list) else 'n/a'}"
            )
        by_pos = {int(d["pos"]): d for d in dists}
        if sorted(by_pos) != [int(p) for p in positions]:
            raise BridgeError("bridge dists do not cover the queried positions")
        return [by_pos[int(p)] for p in positions]

    def predict_rows(self, state: PartialSequence, positions: np.ndarray) -> np.ndarray:
        positions = _checked_positions(state, positions)
        rows = np.zeros((positions.size, self.vocab_size), dtype=np.float64)
        for i, frame in enumerate(self._predict_frames(state, positions)):
            tokens = np.asarray(frame["tokens"], dtype=np.int64)
            probs = np.asarray(frame["probs"], dtype=np.float64)
            if tokens.size != probs.size or tokens.size == 0:
                raise BridgeError(f"malformed dist for position {positions[i]}")
            if (tokens < 0).any() or (tokens >= self.vocab_size).any():
                raise BridgeError(f"dist tokens outside vocab for position {positions[i]}")
            if (probs < 0).any() or (np.diff(probs) > 0).any():
                raise BridgeError(
                    f"dist probs must be non-negative and descending at position {positions[i]}"
                )
            rows[i, tokens] = probs
        return rows

    def predict_dists(
        self, state: PartialSequence, positions: np.ndarray
    ) -> list[PredictiveDistribution]:
        """Wire-faithful distributions, probabilities exactly as served."""
        positions = _checked_positions(state, positions)
        frames = self._predict_frames(state, positions)
        out = []
        for pos, frame in zip(positions, frames):
            entries = tuple(
                (int(t), float(p)) for t, p in zip(frame["tokens"], frame["probs"])
            )
            truncated = len(entries) < self.vocab_size
            out.append(
                PredictiveDistribution(
                    position=int(pos), entries=entries, truncated=truncated
                )
            )
        return out

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                assert self._proc.stdin is not None
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "BridgePredictor":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass
