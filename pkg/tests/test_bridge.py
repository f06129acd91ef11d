"""Bridge client against the compiled stdio server: transparency and failure modes."""

from __future__ import annotations

import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from dgmark import (
    BridgeError,
    DecodeConfig,
    FactorizedToyModel,
    PartialSequence,
    StrategySpec,
    build_partition,
    decode_blockwise,
)
from dgmark.bridge import BridgePredictor
from dgmark.config import build_model
from dgmark.partition import MODE_TOKEN_ID_MOD_2

SERVER_JS = Path(__file__).resolve().parent.parent / "bridge" / "dist" / "server.js"
NODE = shutil.which("node")

pytestmark = pytest.mark.skipif(
    NODE is None or not SERVER_JS.exists(),
    reason="bridge server not built; run npm install && npm run build in bridge/",
)

SPEC = StrategySpec(kind="confidence", selection="multinomial")


def _model_file(tmp_path: Path, rows, name: str = "stub") -> Path:
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"name": name, "rows": rows}), encoding="utf-8")
    return path


def _spawn(model_path: Path, top_k: int = 64) -> BridgePredictor:
    return BridgePredictor([NODE, str(SERVER_JS), str(model_path)], top_k=top_k)


def _fake_server(script: str) -> list[str]:
    return [NODE, "-e", script]


def test_meta_handshake_reports_identity(tmp_path):
    with _spawn(_model_file(tmp_path, [[0.5, 0.5]], name="hello"), top_k=2) as bridge:
        assert bridge.vocab_size == 2
        assert bridge.model_name == "hello"
        assert bridge.truncated_rows is False


def test_truncated_rows_tracks_top_k(tmp_path):
    rows = [[0.25] * 4] * 2
    with _spawn(_model_file(tmp_path, rows), top_k=2) as bridge:
        assert bridge.truncated_rows is True
    with _spawn(_model_file(tmp_path, rows), top_k=4) as bridge:
        assert bridge.truncated_rows is False


def test_decode_through_bridge_is_byte_identical(tmp_path):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([41])))
    rows = rng.dirichlet(np.ones(8), size=16)
    # Route the same float64 values through JSON so both sides hold them.
    rows = np.asarray(json.loads(json.dumps(rows.tolist())))
    in_process = FactorizedToyModel(rows)
    partition = build_partition(None, 8, MODE_TOKEN_ID_MOD_2)

    with _spawn(_model_file(tmp_path, rows.tolist()), top_k=8) as bridge:
        for seed in range(5):
            config = DecodeConfig(length=16, strategy=SPEC, seed=seed)
            local_tokens, local_trace = decode_blockwise(
                in_process, config, (), partition, mode="dgmark"
            )
            wire_tokens, wire_trace = decode_blockwise(
                bridge, config, (), partition, mode="dgmark"
            )
            assert np.array_equal(local_tokens, wire_tokens)
            assert local_trace.predictor_call_log == wire_trace.predictor_call_log
            assert np.array_equal(local_trace.order, wire_trace.order)
            assert local_trace.fallback_steps == wire_trace.fallback_steps


def test_truncated_serving_zero_fills_the_tail(tmp_path):
    with _spawn(_model_file(tmp_path, [[0.1, 0.2, 0.3, 0.4]]), top_k=2) as bridge:
        state = PartialSequence((), 1)
        row = bridge.predict_rows(state, np.asarray([0]))[0]
        assert row.tolist() == [0.0, 0.0, 0.3, 0.4]

        (dist,) = bridge.predict_dists(state, np.asarray([0]))
        assert dist.entries == ((3, 0.4), (2, 0.3))
        assert dist.truncated is True


def test_revealed_position_query_is_rejected_by_the_server(tmp_path):
    with _spawn(_model_file(tmp_path, [[0.5, 0.5]] * 4)) as bridge:
        with pytest.raises(BridgeError, match="invalid-query"):
            bridge._roundtrip(
                {
                    "op": "predict",
                    "prompt": [],
                    "n": 4,
                    "revealed": [[1, 0]],
                    "positions": [1],
                    "top_k": 2,
                }
            )
        # The error frame did not kill the server; normal queries still work.
        state = PartialSequence((), 4)
        assert bridge.predict_rows(state, np.asarray([0])).shape == (1, 2)


def test_length_mismatch_surfaces_as_bridge_error(tmp_path):
    with _spawn(_model_file(tmp_path, [[0.5, 0.5]] * 4)) as bridge:
        state = PartialSequence((), 8)
        with pytest.raises(BridgeError, match="model covers 4 positions"):
            bridge.predict_rows(state, np.asarray([0]))


def test_spawn_failure_is_a_bridge_error():
    with pytest.raises(BridgeError, match="cannot spawn"):
        BridgePredictor(["/no/such/binary"])


def test_server_exit_fails_the_handshake():
    with pytest.raises(BridgeError):
        BridgePredictor(_fake_server("process.exit(0)"))


def test_meta_without_vocab_size_is_rejected():
    script = (
        "process.stdin.resume();"
        "console.log(JSON.stringify({id: 'q0', ok: true, meta: {}}));"
    )
    with pytest.raises(BridgeError, match="meta handshake missing vocab_size"):
        BridgePredictor(_fake_server(script))


def test_tiny_vocab_report_is_rejected():
    script = (
        "process.stdin.resume();"
        "console.log(JSON.stringify({id: 'q0', ok: true, meta: {vocab_size: 1}}));"
    )
    with pytest.raises(BridgeError, match="vocab_size 1"):
        BridgePredictor(_fake_server(script))


def test_config_model_kind_spawns_a_bridge(tmp_path):
    model_path = _model_file(tmp_path, [[0.5, 0.5]] * 4)
    spec = {"kind": "bridge", "argv": [NODE, str(SERVER_JS), str(model_path)], "top_k": 2}
    model = build_model(spec)
    try:
        assert isinstance(model, BridgePredictor)
        assert model.vocab_size == 2
        config = DecodeConfig(length=4, strategy=SPEC, seed=11)
        tokens, _ = decode_blockwise(model, config, (), None, mode="plain")
        assert tokens.shape == (4,)
    finally:
        model.close()
