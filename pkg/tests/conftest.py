"""Shared fixtures: the context model, frozen keys, and an auditing wrapper."""

from __future__ import annotations

import numpy as np
import pytest

from dgmark import MASKED, WatermarkKey, build_partition
from fixture import FIXTURE_VOCAB, fixture_model

# Frozen so every statistical criterion sees the same partition.
FIXTURE_KEY = WatermarkKey(b"fixture-key-0123456789abcdef----", "fix")


class AuditedModel:
    """Delegating predictor that asserts the engine's query discipline.

    Positions must be strictly ascending, in range, and masked; the state
    must come back from the base model untouched. Used everywhere a test
    wants proof that decoding never feeds predictors modified state.
    """

    def __init__(self, base):
        self.base = base
        self.vocab_size = base.vocab_size
        self.calls = 0

    @property
    def truncated_rows(self) -> bool:
        return bool(getattr(self.base, "truncated_rows", False))

    def predict_rows(self, state, positions) -> np.ndarray:
        arr = np.asarray(positions)
        assert arr.ndim == 1 and arr.size >= 1, "empty or misshaped query"
        assert np.all(np.diff(arr) > 0), "positions must be strictly ascending"
        assert np.all((arr >= 0) & (arr < state.length)), "position out of range"
        assert np.all(state.tokens[arr] == MASKED), "queried a revealed position"
        before = state.snapshot()
        rows = self.base.predict_rows(state, positions)
        assert state.snapshot() == before, "predictor saw a mutated state"
        self.calls += 1
        return rows


@pytest.fixture(scope="session")
def context_model():
    return fixture_model()


@pytest.fixture(scope="session")
def context_partition():
    return build_partition(FIXTURE_KEY, FIXTURE_VOCAB)


@pytest.fixture
def audited(context_model):
    return AuditedModel(context_model)
