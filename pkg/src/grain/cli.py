"""Command-line surface: data generation, teacher training, pruning runs,
evaluation, and structure reports.

Exit codes: 0 success, 1 runtime failure, 2 usage error (unknown flag or
subcommand), 3 missing flag or file, 4 invalid configuration.
"""

from __future__ import annotations

import argparse
import os
import sys

from .checkpoint import read_checkpoint, write_checkpoint, write_text_atomic
from .config import RunConfig, apply_overrides, parse_config
from .data import gen_synthetic, load_dataset, save_split
from .errors import ConfigError, GrainError
from .pipeline import evaluate, run_grain, train_teacher
from .pruning import dump_scores
from .report import build_report, format_csv, format_text

EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_CONFIG = 4


class _MissingFlag(GrainError):
    pass


def _require(args, *names):
    for name in names:
        if getattr(args, name.lstrip("-").replace("-", "_")) is None:
            raise _MissingFlag(f"missing required flag {name}")


def _require_file(path: str) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _resolve_seed(args, cfg: RunConfig):
    """--seed beats the GRAIN_SEED environment variable, which beats the
    config file."""
    if args.seed is not None:
        cfg.seed = args.seed
    elif os.environ.get("GRAIN_SEED"):
        try:
            cfg.seed = int(os.environ["GRAIN_SEED"])
        except ValueError:
            raise ConfigError(
                f"GRAIN_SEED must be an integer, got {os.environ['GRAIN_SEED']!r}"
            ) from None


def _load_config(args, overrides=None) -> RunConfig:
    if args.config is not None:
        _require_file(args.config)
        cfg = parse_config(args.config, overrides)
    else:
        cfg = apply_overrides(RunConfig(), overrides)
    _resolve_seed(args, cfg)
    return cfg.validate()


def cmd_gen_data(args) -> int:
    _require(args, "--out-train", "--out-dev")
    cfg = _load_config(args)
    dataset = gen_synthetic(cfg.model.vocab, cfg.model.seq_len, args.count, cfg.seed)
    save_split(dataset.train, args.out_train)
    save_split(dataset.dev, args.out_dev)
    print(f"wrote {len(dataset.train)} train -> {args.out_train}, "
          f"{len(dataset.dev)} dev -> {args.out_dev}")
    return 0


def cmd_train_teacher(args) -> int:
    _require(args, "--data", "--out")
    overrides = {"teacher_epochs": args.epochs}
    cfg = _load_config(args, overrides)
    dataset = load_dataset(_require_file(args.data),
                           _require_file(args.dev) if args.dev else None,
                           cfg.model.vocab, cfg.model.n_classes)
    _, accuracy = train_teacher(cfg, dataset, out_path=args.out)
    print(f"teacher accuracy={accuracy:.4f} checkpoint={args.out}")
    return 0


def cmd_prune(args) -> int:
    _require(args, "--config", "--teacher", "--out", "--data")
    overrides = {"alpha": args.alpha, "density": args.density, "mode": args.mode,
                 "epochs": args.epochs}
    cfg = _load_config(args, overrides)
    teacher = read_checkpoint(_require_file(args.teacher))
    dataset = load_dataset(_require_file(args.data),
                           _require_file(args.dev) if args.dev else None,
                           cfg.model.vocab, cfg.model.n_classes)
    student, trace = run_grain(cfg, teacher, dataset)
    write_checkpoint(args.out, student)
    base = os.path.splitext(args.out)[0]
    trace.save(base + ".trace.csv")
    write_text_atomic(base + ".report.txt", format_text(build_report(student)))
    if args.scores_out:
        dump_scores(args.scores_out, trace.registry, trace.score_table)
    summary = ", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in trace.final.items())
    print(f"pruned checkpoint={args.out} ({summary})")
    return 0


def cmd_eval(args) -> int:
    _require(args, "--checkpoint", "--data")
    model = read_checkpoint(_require_file(args.checkpoint))
    examples = load_dataset(_require_file(args.data), None, model.config.vocab,
                            model.config.n_classes).train
    accuracy, loss = evaluate(model, examples)
    print(f"accuracy={accuracy:.4f}")
    print(f"loss={loss:.6f}")
    return 0


def cmd_report(args) -> int:
    _require(args, "--checkpoint")
    model = read_checkpoint(_require_file(args.checkpoint))
    report = build_report(model)
    text = format_csv(report) if args.format == "csv" else format_text(report)
    if args.out:
        write_text_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grain",
                                     description="intra-attention pruning at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic ordered-pair task")
    p.add_argument("--config")
    p.add_argument("--count", type=int, default=2560)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-train")
    p.add_argument("--out-dev")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-teacher", help="fine-tune the unpruned teacher")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--dev")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train_teacher)

    p = sub.add_parser("prune", help="run the three-stage pruning procedure")
    p.add_argument("--config")
    p.add_argument("--teacher")
    p.add_argument("--data")
    p.add_argument("--dev")
    p.add_argument("--out")
    p.add_argument("--alpha", type=float)
    p.add_argument("--density", type=float)
    p.add_argument("--mode")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scores-out")
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="print the live structure of a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _MissingFlag as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
