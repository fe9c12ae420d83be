"""Command-line entry point.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
3 numeric failure. Metrics go to stdout as JSON lines; progress and tables
that are not machine-readable go to stderr unless they are the command's
main output.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import functional as F
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, parse_config
from .data import FrameBatch, generate_synthetic, read_features, write_features
from .errors import (ConfigError, DimensionError, EmptyInputError, FormatError, NumericError,
                     UninitializedStatsError)
from .gradcheck import GradCheckReport, finite_diff_check
from .layers import Dropout
from .model import MultiStreamEncoder, enumerate_params, param_count
from .tensor import no_grad
from .train import evaluate, fit

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def _log(msg: str):
    print(msg, file=sys.stderr)


def _load_split(cfg: RunConfig, split: str) -> list[FrameBatch]:
    path = cfg.paths.train_features if split == "train" else cfg.paths.eval_features
    if path is None:
        return generate_synthetic(cfg.task_spec(split))
    data = read_features(path)
    for b in data:
        if b.features.shape[1] != cfg.model.input_dim:
            raise DimensionError(f"{path}: {b.features.shape[1]}-dim features, "
                                 f"model.input_dim is {cfg.model.input_dim}")
        if b.labels is None:
            raise ConfigError(f"{path}: training and evaluation need labeled features")
    return data


def _describe(model: MultiStreamEncoder) -> str:
    cfg = model.config
    shape = ", ".join("/".join(str(s.rate) for s in b.streams) for b in cfg.blocks) or "none"
    return (f"model: {len(cfg.blocks)} block(s), stream rates {shape}, "
            f"d_model {cfg.d_model}, {enumerate_params(model):,d} parameters")


# -- train / evaluate ---------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config, args.override)
    model = MultiStreamEncoder(cfg.model_config())
    _log(_describe(model))
    train_data = _load_split(cfg, "train")
    eval_data = _load_split(cfg, "eval")
    metrics_path = args.metrics or cfg.paths.metrics
    sink = open(metrics_path, "w") if metrics_path else None
    try:
        def emit(m):
            line = m.to_json()
            print(line, flush=True)
            if sink:
                sink.write(line + "\n")
                sink.flush()

        history = fit(model, train_data, cfg.train_config(), eval_data, on_epoch=emit)
    finally:
        if sink:
            sink.close()
    checkpoint = args.checkpoint or cfg.paths.checkpoint
    if checkpoint:
        extra = {"epochs": len(history), "config": cfg.to_dict()}
        if history:
            extra["final"] = json.loads(history[-1].to_json())
        save_checkpoint(checkpoint, model, extra)
        _log(f"checkpoint written to {checkpoint}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, extra = load_checkpoint(args.checkpoint)
    if args.features:
        data = read_features(args.features)
    else:
        cfg = (load_config(args.config, args.override) if args.config or args.override
               else _saved_config(extra))
        if cfg.model.input_dim != model.config.input_dim:
            raise DimensionError(f"config input_dim {cfg.model.input_dim} does not match "
                                 f"checkpoint ({model.config.input_dim})")
        data = _load_split(cfg, "eval")
    _check_dims(data, model.config.input_dim, args.features or "evaluation data")
    result = evaluate(model, data)
    print(json.dumps({"accuracy": result.accuracy, "loss": result.loss, "frames": result.frames}))
    return EXIT_OK


def _saved_config(extra: dict) -> RunConfig:
    saved = extra.get("config")
    if saved is None:
        raise ConfigError("checkpoint carries no run configuration; pass --config or --features")
    return parse_config(saved)


def _check_dims(data, input_dim: int, where: str):
    for b in data:
        if b.features.shape[1] != input_dim:
            raise DimensionError(f"{where}: {b.features.shape[1]}-dim features, "
                                 f"checkpoint expects {input_dim}")


# -- gradcheck ----------------------------------------------------------------

def run_gradcheck(cfg: RunConfig) -> GradCheckReport:
    """Finite-difference check of every parameter on a tiny random batch.

    The model runs in training mode with batch statistics; every dropout
    site is reseeded before each evaluation so all calls see one mask.
    """
    g = cfg.gradcheck
    model = MultiStreamEncoder(cfg.model_config())
    model.train()
    rng = np.random.default_rng(g.seed)
    feats = rng.normal(size=(g.batch, g.frames, cfg.model.input_dim))
    labels = rng.integers(0, cfg.model.num_classes, size=(g.batch, g.frames))
    drops = [m for m in model.modules() if isinstance(m, Dropout)]

    def loss_fn():
        for i, m in enumerate(drops):
            m.rng = np.random.default_rng([g.seed, i])
        return F.cross_entropy(model(feats), labels, reduction="sum")

    return finite_diff_check(loss_fn, model.named_parameters(), eps=g.eps,
                             tolerance=g.tolerance, max_coords=g.max_coords, seed=g.seed)


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config, args.override)
    report = run_gradcheck(cfg)
    print(report.format_table())
    if not report.passed:
        names = ", ".join(e.name for e in report.offenders)
        _log(f"gradient check failed for: {names}")
        return EXIT_CHECK
    return EXIT_OK


# -- paramcount ---------------------------------------------------------------

def cmd_paramcount(args) -> int:
    cfg = load_config(args.config, args.override)
    mcfg = cfg.model_config()
    counted = param_count(mcfg)
    enumerated = enumerate_params(MultiStreamEncoder(mcfg))
    if args.json:
        print(json.dumps({"total": counted.total, "enumerated": enumerated,
                          "components": counted.components, "by_kind": counted.by_kind}))
    else:
        print(counted.format_table())
        print(f"enumerated  {enumerated:,d}")
    if enumerated != counted.total:
        _log(f"closed-form count {counted.total} differs from enumeration {enumerated}")
        return EXIT_CHECK
    return EXIT_OK


# -- datagen / dump -----------------------------------------------------------

def cmd_datagen(args) -> int:
    cfg = load_config(args.config, args.override)
    data = generate_synthetic(cfg.task_spec(args.split))
    write_features(args.output, data, input_dim=cfg.model.input_dim)
    _log(f"wrote {len(data)} sequences to {args.output}")
    return EXIT_OK


def cmd_dump(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    data = read_features(args.input)
    _check_dims(data, model.config.input_dim, args.input)
    out = []
    with no_grad():
        for b in data:
            emb = model.embed(b.features.astype(np.float64)[None]).data[0]
            out.append(FrameBatch(emb.astype(np.float32), b.labels))
    write_features(args.output, out, input_dim=model.config.d_model)
    _log(f"wrote {len(out)} embedding sequences to {args.output}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multistream",
                                     description="Multi-stream self-attention encoder toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, required=True):
        p.add_argument("--config", required=required, help="YAML run configuration")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-key override, e.g. train.epochs=1 (repeatable)")
        return p

    p = with_config(sub.add_parser("train", help="train on the configured data"))
    p.add_argument("--metrics", help="also write the metrics stream to this file")
    p.add_argument("--checkpoint", help="checkpoint path (default: paths.checkpoint)")
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("evaluate", help="score a checkpoint"), required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", help="labeled feature container to score")
    p.set_defaults(func=cmd_evaluate)

    p = with_config(sub.add_parser("gradcheck", help="finite-difference gradient check"))
    p.set_defaults(func=cmd_gradcheck)

    p = with_config(sub.add_parser("paramcount", help="closed-form parameter breakdown"))
    p.add_argument("--json", action="store_true", help="print one JSON object")
    p.set_defaults(func=cmd_paramcount)

    p = with_config(sub.add_parser("datagen", help="write a synthetic feature container"))
    p.add_argument("--split", choices=["train", "eval"], default="train")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("dump", help="write final-block embeddings for a feature file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, DimensionError, FormatError, EmptyInputError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except (NumericError, UninitializedStatsError, FloatingPointError) as exc:
        _log(f"numeric failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
