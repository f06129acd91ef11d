"""Batch command-line front-end: generate | detect | attack | eval | calibrate.

Every stage is deterministic given (config, root seed): per-record seeds
are derived up front from named substreams, workers only change wall time,
and output files are written in input order with fixed JSON formatting, so
reruns are byte-identical.

Exit codes: 0 ok, 2 bad configuration or arguments, 3 runtime failure,
4 finished with per-record failures recorded in the output.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import records as rec
from .attack import ATTACK_KINDS, AttackSpec, apply_attack
from .config import RunConfig, build_model, load_config, resolve_partition
from .decoder import MODE_DGMARK, MODE_PLAIN, decode_blockwise
from .detector import (
    NULL_EXACT,
    NULL_MODELS,
    STATISTIC_Z,
    STATISTIC_Z_WIN,
    DetectorConfig,
    calibrate,
    detect,
)
from .errors import ConfigError, DgmarkError
from .evaluate import TPR_AT_FPR_LEVELS, ScoreSet, evaluate_scores, roc_points
from .partition import MODE_KEYED, PARTITION_MODES, build_partition, load_key
from .randomness import derive_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_PARTIAL = 4

WORKERS_ENV = "DGMARK_WORKERS"

_model_cache: dict[tuple[str, str], object] = {}


def _cached_model(model_json: str, base_dir: str):
    key = (model_json, base_dir)
    model = _model_cache.get(key)
    if model is None:
        model = build_model(json.loads(model_json), Path(base_dir))
        _model_cache[key] = model
    return model


def _map_ordered(fn: Callable, payloads: Sequence, workers: int) -> list:
    """Run fn over payloads, preserving input order regardless of workers."""
    if workers <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    chunk = max(1, len(payloads) // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, payloads, chunksize=chunk))


def _workers(args: argparse.Namespace) -> int:
    if args.workers is not None:
        value = args.workers
    else:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            value = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from exc
    if value < 1:
        raise ConfigError(f"workers must be >= 1, got {value}")
    return value


def _root_seed(args: argparse.Namespace, config: RunConfig | None) -> int:
    if args.seed is not None:
        return args.seed
    if config is not None and config.seed is not None:
        return config.seed
    raise ConfigError("a root seed is required (--seed or config 'seed')")


def _config_required(args: argparse.Namespace) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    return load_config(args.config)


def _vocab_size(args: argparse.Namespace, config: RunConfig | None) -> int:
    if getattr(args, "vocab_size", None) is not None:
        return args.vocab_size
    if config is not None:
        value = config.model.get("vocab_size")
        if value is not None:
            return int(value)
    raise ConfigError("vocab size unresolved; pass --vocab-size or set model.vocab_size")


def _write_json(payload: Mapping, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- generate


def _generate_one(payload: dict) -> dict:
    model = _cached_model(payload["model_json"], payload["base_dir"])
    config = dataclasses.replace(payload["template"], seed=payload["seed"])
    tokens, trace = decode_blockwise(
        model, config, payload["prompt"], payload["partition"], mode=payload["mode"]
    )
    return rec.decode_record(payload["id"], payload["mode"], config, tokens, trace)


def cmd_generate(args: argparse.Namespace) -> int:
    config = _config_required(args)
    root = _root_seed(args, config)
    model = build_model(config.model, config.base_dir)
    partition = None
    if config.decode_mode != MODE_PLAIN:
        partition = resolve_partition(config, model.vocab_size, args.key)
    model_json = json.dumps(config.model, sort_keys=True)
    payloads = []
    for pi, prompt in enumerate(config.prompts):
        for ri in range(config.num_sequences):
            payloads.append(
                {
                    "model_json": model_json,
                    "base_dir": str(config.base_dir),
                    "template": config.decode,
                    "mode": config.decode_mode,
                    "partition": partition,
                    "prompt": prompt,
                    "seed": derive_seed(root, "generate", pi, ri),
                    "id": f"p{pi}-r{ri}",
                }
            )
    out_records = _map_ordered(_generate_one, payloads, _workers(args))
    rec.write_jsonl(args.out, out_records)
    return EXIT_OK


# ------------------------------------------------------------------ detect


def _detect_one(payload: dict) -> tuple[dict, list[tuple[str, int, int]]]:
    record_id = payload["id"]
    try:
        tokens = np.asarray(payload["tokens"], dtype=np.int64)
        report = detect(tokens, payload["partition"], payload["detector"])
    except DgmarkError as exc:
        return {"id": record_id, "error": str(exc)}, []
    windows = []
    if payload["want_windows"]:
        windows = [(record_id, w.start, w.match_count) for w in report.windows]
    return rec.report_record(record_id, report), windows


def cmd_detect(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else None
    detector = config.detector if config else DetectorConfig()
    if args.z_threshold is not None or args.z_win_threshold is not None:
        detector = dataclasses.replace(
            detector,
            z_threshold=args.z_threshold if args.z_threshold is not None else detector.z_threshold,
            z_win_threshold=(
                args.z_win_threshold
                if args.z_win_threshold is not None
                else detector.z_win_threshold
            ),
        )
    vocab = _vocab_size(args, config)
    if config is not None:
        partition = resolve_partition(config, vocab, args.key)
    else:
        if args.key is None:
            raise ConfigError("detect requires --key (or a config with key_path)")
        partition = build_partition(load_key(args.key), vocab, args.partition_mode)

    inputs = rec.read_jsonl(args.input)
    payloads = []
    for record in inputs:
        payloads.append(
            {
                "id": str(record.get("id")),
                "tokens": record.get("tokens"),
                "partition": partition,
                "detector": detector,
                "want_windows": args.windows_out is not None,
            }
        )
    results = _map_ordered(_detect_one, payloads, _workers(args))
    out_records = [r for r, _ in results]
    rec.write_jsonl(args.out, out_records)
    if args.windows_out is not None:
        with open(args.windows_out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("id,start,match_count,ratio\n")
            for _, windows in results:
                for record_id, start, count in windows:
                    fh.write(f"{record_id},{start},{count},{count / detector.window!r}\n")
    failures = sum(1 for r in out_records if "error" in r)
    if failures:
        print(f"detect: {failures}/{len(out_records)} records failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# ------------------------------------------------------------------ attack


def _attack_one(payload: dict) -> dict:
    record = payload["record"]
    spec = payload["spec"]
    edited = apply_attack(rec.record_tokens(record), spec)
    out = rec.attack_record(record, edited, spec)
    out["id"] = payload["id"]
    return out


def cmd_attack(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else None
    root = _root_seed(args, config)
    vocab = _vocab_size(args, config)
    if args.kind is not None:
        if args.epsilon is None:
            raise ConfigError("--epsilon is required with --kind")
        attacks: Sequence[Mapping] = [{"kind": args.kind, "epsilon": args.epsilon}]
    elif config is not None and config.attacks:
        attacks = config.attacks
    else:
        raise ConfigError("no attacks: pass --kind/--epsilon or a config with attacks")

    inputs = rec.read_jsonl(args.input)
    payloads = []
    for ai, attack in enumerate(attacks):
        for ri, record in enumerate(inputs):
            spec = AttackSpec(
                kind=str(attack["kind"]),
                epsilon=float(attack["epsilon"]),
                seed=derive_seed(root, "attack", ai, ri),
                vocab_size=vocab,
            )
            payloads.append(
                {
                    "record": record,
                    "spec": spec,
                    "id": f"{record.get('id')}-{spec.kind}-eps{spec.epsilon!r}",
                }
            )
    out_records = _map_ordered(_attack_one, payloads, _workers(args))
    rec.write_jsonl(args.out, out_records)
    return EXIT_OK


# -------------------------------------------------------------------- eval


def _scores_from(path: str, statistic: str) -> list[float]:
    scores = []
    for record in rec.read_jsonl(path):
        if "error" in record:
            continue
        if statistic not in record:
            raise ConfigError(f"record {record.get('id')!r} in {path} lacks {statistic!r}")
        scores.append(float(record[statistic]))
    if not scores:
        raise ConfigError(f"no usable records in {path}")
    return scores


def _ratios_from(path: str) -> list[float]:
    ratios = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        try:
            col = header.index("ratio")
        except ValueError as exc:
            raise ConfigError(f"{path} has no 'ratio' column") from exc
        for line in fh:
            line = line.strip()
            if line:
                ratios.append(float(line.split(",")[col]))
    return ratios


def cmd_eval(args: argparse.Namespace) -> int:
    statistic = args.statistic
    scores = ScoreSet(
        positives=np.asarray(_scores_from(args.positive, statistic)),
        negatives=np.asarray(_scores_from(args.negative, statistic)),
    )
    levels = tuple(args.level) if args.level else TPR_AT_FPR_LEVELS
    ratios = _ratios_from(args.ratios) if args.ratios else None
    report = evaluate_scores(
        scores,
        thresholds=tuple(args.threshold or ()),
        levels=levels,
        ratios=ratios,
        bins=args.bins,
    )
    payload: dict = {
        "schema_version": 1,
        "statistic": statistic,
        "num_positives": int(scores.positives.size),
        "num_negatives": int(scores.negatives.size),
        "auc": report.auc,
        "tpr_at_fpr": {repr(level): tpr for level, tpr in report.tpr_at_fpr.items()},
        "confusions": [
            {"threshold": t, "fpr": c.fpr, "tnr": c.tnr, "tpr": c.tpr, "fnr": c.fnr}
            for t, c in report.confusions
        ],
    }
    if report.histogram is not None:
        payload["histogram"] = {
            "edges": [float(e) for e in report.histogram.edges],
            "counts": [int(c) for c in report.histogram.counts],
        }
        if args.histogram_out:
            Path(args.histogram_out).write_text(report.histogram.to_csv(), encoding="utf-8")
    if args.roc_out:
        with open(args.roc_out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("threshold,fpr,tpr\n")
            for cut, fpr, tpr in roc_points(scores):
                fh.write(f"{cut!r},{fpr!r},{tpr!r}\n")
    _write_json(payload, args.out)
    return EXIT_OK


# --------------------------------------------------------------- calibrate


def cmd_calibrate(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else None
    partition = None
    if args.vocab_size is not None:
        mode = args.partition_mode
        key = load_key(args.key) if args.key else None
        if mode == MODE_KEYED and key is None:
            partition = None  # balanced default; keyed bits need the key
        else:
            partition = build_partition(key, args.vocab_size, mode)
    detector = config.detector if config else DetectorConfig(window=args.window, stride=args.stride)
    result = calibrate(
        args.null_model,
        args.statistic,
        args.n,
        args.target_fpr,
        partition=partition,
        config=detector,
        num_sequences=args.num_sequences,
        seed=args.seed if args.seed is not None else 0,
    )
    threshold_key = "z_threshold" if args.statistic == STATISTIC_Z else "z_win_threshold"
    payload = {
        "schema_version": 1,
        "statistic": args.statistic,
        "null_model": args.null_model,
        "n": args.n,
        "target_fpr": args.target_fpr,
        "threshold": result.threshold,
        "achieved_fpr": result.achieved_fpr,
        "match_count": result.match_count,
        "detector": {
            "window": detector.window,
            "stride": detector.stride,
            threshold_key: result.threshold,
        },
    }
    if args.null_model != NULL_EXACT:
        payload["num_sequences"] = args.num_sequences
        payload["seed"] = args.seed if args.seed is not None else 0
    _write_json(payload, args.out)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="PATH", help="run configuration JSON")
    sub.add_argument("--key", metavar="PATH", help="watermark key file")
    sub.add_argument("--out", metavar="PATH", help="output path")
    sub.add_argument("--workers", type=int, metavar="N", help=f"worker processes (env {WORKERS_ENV})")
    sub.add_argument("--seed", type=int, metavar="U64", help="root seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgmark",
        description="Order-steered watermarking for masked-diffusion decoding: "
        "generation, detection, attacks, and evaluation over JSONL corpora.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("generate", help="decode sequences per the run config")
    _add_common(gen)
    gen.set_defaults(func=cmd_generate)

    det = commands.add_parser("detect", help="score token records against a key")
    det.add_argument("input", metavar="TOKENS_JSONL", help="decode/attack output records")
    _add_common(det)
    det.add_argument("--vocab-size", type=int, help="vocab size for the partition")
    det.add_argument(
        "--partition-mode", choices=PARTITION_MODES, default=MODE_KEYED,
        help="partition construction when no config is given",
    )
    det.add_argument("--z-threshold", type=float, help="decision cutoff for z")
    det.add_argument("--z-win-threshold", type=float, help="decision cutoff for z_win")
    det.add_argument("--windows-out", metavar="PATH", help="per-window match ratio CSV")
    det.set_defaults(func=cmd_detect)

    att = commands.add_parser("attack", help="post-edit token records")
    att.add_argument("input", metavar="TOKENS_JSONL")
    _add_common(att)
    att.add_argument("--vocab-size", type=int, help="vocab size for sampled tokens")
    att.add_argument("--kind", choices=ATTACK_KINDS, help="single attack kind")
    att.add_argument("--epsilon", type=float, help="edit budget for --kind")
    att.set_defaults(func=cmd_attack)

    ev = commands.add_parser("eval", help="metrics from detection reports")
    _add_common(ev)
    ev.add_argument("--positive", required=True, metavar="PATH", help="watermarked reports JSONL")
    ev.add_argument("--negative", required=True, metavar="PATH", help="null reports JSONL")
    ev.add_argument(
        "--statistic", choices=(STATISTIC_Z, STATISTIC_Z_WIN), default=STATISTIC_Z
    )
    ev.add_argument("--threshold", type=float, action="append", help="confusion cutoff (repeatable)")
    ev.add_argument("--level", type=float, action="append", help="TPR@FPR level (repeatable)")
    ev.add_argument("--ratios", metavar="PATH", help="window ratio CSV from detect --windows-out")
    ev.add_argument("--bins", type=int, default=10, help="histogram bins")
    ev.add_argument("--roc-out", metavar="PATH", help="ROC points CSV")
    ev.add_argument("--histogram-out", metavar="PATH", help="histogram CSV")
    ev.set_defaults(func=cmd_eval)

    cal = commands.add_parser("calibrate", help="null-calibrated decision thresholds")
    _add_common(cal)
    cal.add_argument("--null-model", choices=NULL_MODELS, default=NULL_EXACT)
    cal.add_argument(
        "--statistic", choices=(STATISTIC_Z, STATISTIC_Z_WIN), default=STATISTIC_Z
    )
    cal.add_argument("--n", type=int, required=True, help="sequence length")
    cal.add_argument("--target-fpr", type=float, required=True)
    cal.add_argument("--num-sequences", type=int, default=100_000, help="Monte Carlo nulls")
    cal.add_argument("--window", type=int, default=8)
    cal.add_argument("--stride", type=int, default=1)
    cal.add_argument("--vocab-size", type=int, help="partition vocab for unbalanced nulls")
    cal.add_argument("--partition-mode", choices=PARTITION_MODES, default=MODE_KEYED)
    cal.set_defaults(func=cmd_calibrate)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    stage = args.command
    try:
        if stage in ("generate", "detect", "attack") and args.out is None:
            raise ConfigError("--out is required for this command")
        return args.func(args)
    except ConfigError as exc:
        print(f"{stage}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DgmarkError as exc:
        print(f"{stage}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"{stage}: io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
