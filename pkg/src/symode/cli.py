"""Command-line interface: gen, train, eval, infer, divfield."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symode",
        description="Synthesize ODE corpora, train the dual-decoder model, "
        "and evaluate symbolic predictions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a training dataset")
    p.add_argument("--config", help="JSON file with GenConfig field overrides")
    p.add_argument("--count", type=int, required=True, help="accepted samples to produce")
    p.add_argument("--out", required=True, help="output JSON-lines path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--config", help="JSON file with {'model': {...}, 'train': {...}} overrides")
    p.add_argument("--data", required=True, help="dataset produced by 'gen'")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--preset", choices=["toy", "paper"], default="toy")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-der", type=float, default=None, help="override derivative loss weight")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--log-every", type=int, default=0)

    p = sub.add_parser("eval", help="run the benchmark evaluation protocols")
    p.add_argument("--checkpoint", help="model checkpoint to evaluate")
    p.add_argument(
        "--predictions",
        action="append",
        default=[],
        help="predictions JSON mapping entry id -> equations (repeatable)",
    )
    p.add_argument("--benchmark", default="bundled", help="benchmark file or 'bundled'")
    p.add_argument("--noise-levels", default="0,0.01,0.02,0.03,0.04,0.05")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--beam", type=int, default=0, help="beam size (0 = greedy)")
    p.add_argument("--max-decode-len", type=int, default=None, help="cap on generated ODE tokens")

    p = sub.add_parser("infer", help="infer a symbolic system from a CSV time series")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--columns", help="comma list: time column then value columns (names or indices)")
    p.add_argument("--out", required=True, help="output JSON path")
    p.add_argument("--n-points", type=int, default=100)
    p.add_argument("--beam", type=int, default=0)
    p.add_argument("--max-decode-len", type=int, default=None, help="cap on generated ODE tokens")

    p = sub.add_parser("divfield", help="export a divergence field as CSV plot data")
    p.add_argument("--system", required=True, help="equations as prefix or infix text, '|'-separated")
    p.add_argument("--region", default="auto", help="'auto' or 'lo:hi[:points]' per dimension, comma-separated")
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _cmd_gen(args) -> int:
    from .datasets import GenConfig, generate_dataset

    overrides = _load_json(args.config) if args.config else {}
    known = {f.name for f in dataclasses.fields(GenConfig)}
    bad = set(overrides) - known
    if bad:
        raise ValueError(f"unknown GenConfig fields in {args.config}: {sorted(bad)}")
    for key in ("dimension_weights", "noise_levels", "binary_ops", "unary_ops"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    config = GenConfig(**overrides)
    summary = generate_dataset(
        config, args.count, args.out, base_seed=args.seed, workers=args.workers
    )
    print(
        f"accepted {summary.accepted}/{summary.attempts} attempts "
        f"(discards: {summary.discarded or 'none'}) -> {args.out}"
    )
    return 0


def _cmd_train(args) -> int:
    from .datasets import read_dataset, read_manifest
    from .model import (
        DualDecoderModel,
        TrainConfig,
        Trainer,
        encode_record,
        preset_config,
        save_checkpoint,
    )
    from .tokenization import Vocabulary

    overrides = _load_json(args.config) if args.config else {}
    manifest = read_manifest(args.data)
    vocab_info = manifest["vocab"]
    vocab = Vocabulary(
        d_max=vocab_info["d_max"],
        mantissa_digits=vocab_info["mantissa_digits"],
        exponent_range=vocab_info["exponent_range"],
    )
    if vocab.hash != vocab_info["hash"]:
        raise ValueError("dataset manifest vocabulary hash does not match its settings")

    records = read_dataset(args.data)
    if not records:
        raise ValueError(f"dataset {args.data} is empty")
    mismatched = sum(1 for r in records if r["vocab_hash"] != vocab.hash)
    if mismatched:
        raise ValueError(f"{mismatched} records carry a different vocabulary hash")
    samples = [encode_record(r, vocab) for r in records]

    model_overrides = dict(overrides.get("model", {}))
    model_overrides.setdefault("d_max", vocab.d_max)
    model_config = preset_config(args.preset, **model_overrides)

    train_overrides = dict(overrides.get("train", {}))
    train_overrides.setdefault("seed", args.seed)
    train_overrides.setdefault("total_steps", args.steps)
    train_overrides.setdefault("warmup_steps", max(1, args.steps // 10))
    train_overrides.setdefault(
        "cosine_steps", max(1, args.steps - train_overrides["warmup_steps"])
    )
    if args.lambda_der is not None:
        train_overrides["lambda_der"] = args.lambda_der
    if args.batch_size is not None:
        train_overrides["batch_size"] = args.batch_size
    train_config = TrainConfig(**train_overrides)

    import torch

    torch.set_num_threads(max(1, os.cpu_count() or 1))
    model = DualDecoderModel(model_config, len(vocab))
    model.init_parameters(train_config.seed)
    trainer = Trainer(model, train_config, vocab.pad_id)
    history = trainer.train(samples, args.steps, log_every=args.log_every)
    rejected = sum(1 for h in history if h["rejected"])
    save_checkpoint(
        args.out,
        model,
        vocab,
        step=trainer.step_count,
        extra={"train_config": dataclasses.asdict(train_config), "rejected_steps": rejected},
    )
    print(
        f"trained {trainer.step_count} steps ({rejected} rejected), "
        f"final loss {history[-1]['loss']:.4f} -> {args.out}"
    )
    return 0


def _load_predictions(path) -> dict:
    payload = _load_json(path)
    return payload.get("predictions", payload)


def _cmd_eval(args) -> int:
    from .benchmark import bundled_benchmark, emit_combined, load_benchmark, run_suite

    if not args.checkpoint and not args.predictions:
        raise ValueError("provide --checkpoint and/or --predictions")
    benchmark = (
        bundled_benchmark() if args.benchmark == "bundled" else load_benchmark(args.benchmark)
    )
    noise_levels = tuple(float(x) for x in args.noise_levels.split(",") if x.strip())
    decode_mode = "beam" if args.beam > 0 else "greedy"

    named_reports = []
    if args.checkpoint:
        report = run_suite(
            benchmark,
            noise_levels,
            seed=args.seed,
            checkpoint=args.checkpoint,
            workers=args.workers,
            decode_mode=decode_mode,
            beam_size=max(1, args.beam),
            max_decode_len=args.max_decode_len,
        )
        named_reports.append(("model", report))
    for path in args.predictions:
        name = os.path.splitext(os.path.basename(path))[0]
        report = run_suite(
            benchmark,
            noise_levels,
            seed=args.seed,
            predictions=_load_predictions(path),
            workers=args.workers,
        )
        named_reports.append((name, report))

    emit_combined(named_reports, args.out)
    for name, report in named_reports:
        rec = report.aggregates["p_r2_reconstruction"]
        print(f"{name}: P(R2>0.9) reconstruction by noise: {rec}")
    print(f"report written to {args.out}")
    return 0


def _cmd_infer(args) -> int:
    from .benchmark import infer_from_csv
    from .expressions import to_infix, to_prefix_text

    columns = [c.strip() for c in args.columns.split(",")] if args.columns else None
    result = infer_from_csv(
        args.checkpoint,
        args.csv,
        columns=columns,
        n_points=args.n_points,
        decode_mode="beam" if args.beam > 0 else "greedy",
        beam_size=max(1, args.beam),
        max_decode_len=args.max_decode_len,
    )
    payload = {
        "columns": list(result.column_names),
        "failures": list(result.failures),
        "normalization": result.normalization,
        "r2": result.r2 if np.isfinite(result.r2) else repr(result.r2),
        "system_infix": [to_infix(eq) for eq in result.system.equations] if result.system else None,
        "system_prefix": [to_prefix_text(eq) for eq in result.system.equations] if result.system else None,
        "normalized_prefix": (
            [to_prefix_text(eq) for eq in result.normalized_system.equations]
            if result.normalized_system
            else None
        ),
    }
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if result.system is None:
        print(f"inference failed: {result.failures}", file=sys.stderr)
        return 1
    print(f"R2 {result.r2:.4f}; system: " + "; ".join(to_infix(e) for e in result.system.equations))
    return 0


def _parse_region(text: str, dimension: int):
    from .metrics import Region, _default_resolution

    if text == "auto":
        g = _default_resolution(dimension)
        return Region(
            lower=(-3.0,) * dimension, upper=(3.0,) * dimension, resolution=(g,) * dimension
        )
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != dimension:
        raise ValueError(f"region has {len(parts)} dimensions, system has {dimension}")
    lower, upper, res = [], [], []
    for part in parts:
        pieces = part.split(":")
        if len(pieces) not in (2, 3):
            raise ValueError(f"bad region component {part!r}; expected lo:hi[:points]")
        lower.append(float(pieces[0]))
        upper.append(float(pieces[1]))
        res.append(int(pieces[2]) if len(pieces) == 3 else _default_resolution(dimension))
    return Region(lower=tuple(lower), upper=tuple(upper), resolution=tuple(res))


def _cmd_divfield(args) -> int:
    from .expressions import OdeSystem, parse_expression
    from .metrics import divergence_field

    equations = tuple(parse_expression(p) for p in args.system.split("|") if p.strip())
    system = OdeSystem(equations)
    region = _parse_region(args.region, system.dimension)
    field = divergence_field(system, region)
    field.to_csv(args.out)
    valid = int(field.valid.sum())
    print(f"{field.values.size} grid points ({valid} valid) -> {args.out}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "divfield": _cmd_divfield,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as err:  # CLI boundary: fail with a message, not a traceback
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
