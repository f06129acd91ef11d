"""Run configuration: one schema-versioned JSON document per pipeline run.

The document carries the model spec, decode and detector parameters, the
attack list, key reference, and corpus sizing. Paths are resolved relative
to the config file so runs are relocatable. Unknown keys are rejected;
silent typos in sweep scripts are worse than loud ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .decoder import DECODE_MODES, MODE_PLAIN, DecodeConfig
from .detector import DetectorConfig
from .errors import ConfigError
from .partition import (
    MODE_KEYED,
    PARTITION_MODES,
    ParityPartition,
    WatermarkKey,
    build_partition,
    load_key,
)
from .predictor import FactorizedToyModel, Predictor, train_context_mix
from .records import read_jsonl
from .strategy import StrategySpec

SCHEMA_VERSION = 1

MODEL_KINDS = ("uniform", "factorized", "context-mix", "bridge")

_TOP_LEVEL_KEYS = {
    "schema_version",
    "seed",
    "num_sequences",
    "prompts",
    "model",
    "decode",
    "detector",
    "attacks",
    "partition_mode",
    "key_path",
}


def _require(cfg: Mapping, key: str, where: str):
    if key not in cfg:
        raise ConfigError(f"{where} is missing required key {key!r}")
    return cfg[key]


def _strategy_from(cfg: Mapping) -> StrategySpec:
    return StrategySpec(
        kind=str(_require(cfg, "kind", "strategy")),
        selection=str(cfg.get("selection", "greedy")),
        temperature=float(cfg.get("temperature", 1.0)),
    )


def _decode_from(cfg: Mapping) -> tuple[DecodeConfig, str]:
    length = int(_require(cfg, "length", "decode"))
    block_size = cfg.get("block_size")
    template = DecodeConfig(
        length=length,
        strategy=_strategy_from(_require(cfg, "strategy", "decode")),
        seed=0,
        block_size=None if block_size is None else int(block_size),
        beam=int(cfg.get("beam", 1)),
    )
    mode = str(cfg.get("mode", MODE_PLAIN))
    if mode not in DECODE_MODES:
        raise ConfigError(f"unknown decode mode {mode!r}")
    if mode == "dgmark" and template.beam != 1:
        raise ConfigError("decode mode 'dgmark' requires beam=1; use mode 'lookahead'")
    return template, mode


def _detector_from(cfg: Mapping) -> DetectorConfig:
    zt = cfg.get("z_threshold")
    zw = cfg.get("z_win_threshold")
    return DetectorConfig(
        window=int(cfg.get("window", 8)),
        stride=int(cfg.get("stride", 1)),
        z_threshold=None if zt is None else float(zt),
        z_win_threshold=None if zw is None else float(zw),
    )


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs besides the root seed override."""

    model: dict
    decode: DecodeConfig
    decode_mode: str
    detector: DetectorConfig
    attacks: tuple[dict, ...]
    partition_mode: str
    key_path: str | None
    num_sequences: int
    prompts: tuple[tuple[int, ...], ...]
    seed: int | None
    base_dir: Path = field(default_factory=Path)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw: Mapping, base_dir: Path = Path()) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    version = _require(raw, "schema_version", "config")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}; expected {SCHEMA_VERSION}")

    model = dict(_require(raw, "model", "config"))
    if model.get("kind") not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {model.get('kind')!r}")

    decode, decode_mode = _decode_from(_require(raw, "decode", "config"))
    detector = _detector_from(raw.get("detector", {}))

    attacks = []
    for i, entry in enumerate(raw.get("attacks", [])):
        attacks.append(
            {
                "kind": str(_require(entry, "kind", f"attacks[{i}]")),
                "epsilon": float(_require(entry, "epsilon", f"attacks[{i}]")),
            }
        )

    partition_mode = str(raw.get("partition_mode", MODE_KEYED))
    if partition_mode not in PARTITION_MODES:
        raise ConfigError(f"unknown partition_mode {partition_mode!r}")

    prompts_raw = raw.get("prompts", [[]])
    if not isinstance(prompts_raw, Sequence) or not prompts_raw:
        raise ConfigError("prompts must be a non-empty list of token lists")
    prompts = tuple(tuple(int(t) for t in p) for p in prompts_raw)

    num_sequences = int(raw.get("num_sequences", 1))
    if num_sequences < 1:
        raise ConfigError(f"num_sequences must be positive, got {num_sequences}")

    seed = raw.get("seed")
    key_path = raw.get("key_path")
    config = RunConfig(
        model=model,
        decode=decode,
        decode_mode=decode_mode,
        detector=detector,
        attacks=tuple(attacks),
        partition_mode=partition_mode,
        key_path=None if key_path is None else str(key_path),
        num_sequences=num_sequences,
        prompts=prompts,
        seed=None if seed is None else int(seed),
        base_dir=base_dir,
    )
    resolved = config.resolve(config.key_path)
    if resolved is not None and not resolved.exists():
        raise ConfigError(f"key file {resolved} does not exist")
    return config


def _read_json_file(path: Path, what: str):
    if not path.exists():
        raise ConfigError(f"{what} file {path} does not exist")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {what} file {path}: {exc}") from exc


def build_model(model: Mapping, base_dir: Path = Path()) -> Predictor:
    """Instantiate the predictor named by a model spec."""
    kind = model.get("kind")
    if kind == "uniform":
        return FactorizedToyModel.uniform(
            int(_require(model, "length", "model")), int(_require(model, "vocab_size", "model"))
        )
    if kind == "factorized":
        if "rows" in model:
            rows = model["rows"]
        else:
            path = Path(str(_require(model, "path", "model")))
            rows = _read_json_file(path if path.is_absolute() else base_dir / path, "model rows")
        return FactorizedToyModel(np.asarray(rows, dtype=np.float64))
    if kind == "context-mix":
        path = Path(str(_require(model, "corpus_path", "model")))
        resolved = path if path.is_absolute() else base_dir / path
        if not resolved.exists():
            raise ConfigError(f"corpus file {resolved} does not exist")
        records = read_jsonl(resolved)
        corpus = []
        for i, record in enumerate(records):
            if "tokens" not in record:
                raise ConfigError(f"corpus record {i} has no 'tokens' field")
            corpus.append([int(t) for t in record["tokens"]])
        return train_context_mix(corpus, float(model.get("alpha", 1.0)))
    if kind == "bridge":
        from .bridge import BridgePredictor

        return BridgePredictor(
            argv=[str(a) for a in _require(model, "argv", "model")],
            top_k=int(model.get("top_k", 64)),
        )
    raise ConfigError(f"unknown model kind {kind!r}")


def resolve_partition(
    config: RunConfig, vocab_size: int, key_override: str | None = None
) -> ParityPartition:
    """Build the partition from the config's key reference and mode."""
    key: WatermarkKey | None = None
    key_path = key_override if key_override is not None else config.key_path
    if config.partition_mode == MODE_KEYED:
        if key_path is None:
            raise ConfigError("keyed partition mode requires --key or key_path")
        resolved = Path(key_path) if key_override is not None else config.resolve(key_path)
        key = load_key(str(resolved))
    return build_partition(key, vocab_size, config.partition_mode)
