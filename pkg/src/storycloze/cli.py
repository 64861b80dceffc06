"""Command-line front door: train, eval, ablate, visualize.

Every command is reproducible bit-for-bit in its file outputs for a fixed
--seed. See the README for the file formats involved.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

from .config import AblationConfig, TrainConfig
from .data import gen_synthetic, load_annotations, load_rocstories, build_vocab
from .training import (
    evaluate,
    load_checkpoint,
    save_checkpoint,
    split_holdout,
    train,
)
from .viz import UnknownStoryIdError, dump_story_heatmaps


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="story CSV path")
    p.add_argument("--synthetic", type=int, metavar="N",
                   help="generate N synthetic stories instead of reading --data")
    p.add_argument("--annotations", help="JSON-lines POS/NER/relation sidecar")
    p.add_argument("--seed", type=int, default=0)


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embeddings", help="pretrained embedding text file")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--hidden", type=int, default=96)
    p.add_argument("--word-dim", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.008)
    p.add_argument("--features", default="csm",
                   choices=["c", "s", "m", "cs", "cm", "sm", "csm"])
    p.add_argument("--no-deem", action="store_true",
                   help="zero initial memory instead of the exposition memory")
    p.add_argument("--no-deeav", action="store_true",
                   help="drop the exposition summary vector from the classifier")
    p.add_argument("--no-distill", action="store_true",
                   help="use raw exposition encodings instead of distilled ones")
    p.add_argument("--no-exp-aware-climax", action="store_true")
    p.add_argument("--no-exp-aware-option", action="store_true")


def _ablation_from_args(args) -> AblationConfig:
    return AblationConfig(
        deem=not args.no_deem,
        deeav=not args.no_deeav,
        distill=not args.no_distill,
        exp_aware_climax=not args.no_exp_aware_climax,
        exp_aware_option=not args.no_exp_aware_option,
        features=args.features,
    )


def _config_from_args(args) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size, learning_rate=args.lr, hidden=args.hidden,
        d_word=args.word_dim, max_epochs=args.epochs, seed=args.seed,
        ablation=_ablation_from_args(args),
    )


def _load_stories(args, seed_offset: int = 0):
    if args.synthetic:
        return gen_synthetic(args.synthetic, seed=args.seed + seed_offset)
    if not args.data:
        raise SystemExit2("either --data or --synthetic is required")
    if not os.path.exists(args.data):
        raise SystemExit2(f"data file not found: {args.data}")
    return load_rocstories(args.data)


class SystemExit2(Exception):
    """Usage-level failure; main() turns it into exit code 2."""


def cmd_train(args) -> int:
    stories = _load_stories(args)
    annotations = load_annotations(args.annotations) if args.annotations else None
    config = _config_from_args(args)
    vocab = build_vocab(stories, embedding_file=args.embeddings,
                        d_word=args.word_dim, include_oov=True, seed=args.seed)
    train_part, dev_part = split_holdout(stories, args.seed)
    result = train(train_part, dev_part, config, vocab, annotations)
    save_checkpoint(result.checkpoint, args.out)
    log_path = args.out + ".log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for record in result.history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"checkpoint: {args.out}")
    print(f"log: {log_path}")
    print(f"best dev accuracy: {result.checkpoint.best_dev_acc:.4f} "
          f"(epoch {result.checkpoint.epoch})")
    return 0


def _write_predictions(path: str, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["story_id", "label", "prediction", "score1", "score2",
                    "p1", "p2"])
        for sid, label, pred, s1, s2, p1, p2 in rows:
            w.writerow([sid, label if label is not None else "", pred,
                        f"{s1:.6f}", f"{s2:.6f}", f"{p1:.6f}", f"{p2:.6f}"])


def cmd_eval(args) -> int:
    if not os.path.exists(args.checkpoint):
        raise SystemExit2(f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    stories = _load_stories(args)
    annotations = load_annotations(args.annotations) if args.annotations else None
    result = evaluate(stories, ckpt, annotations)
    _write_predictions(args.out, result.predictions)
    print(f"accuracy: {result.accuracy:.4f}")
    print(f"predictions: {args.out}")
    return 0


def default_ablation_matrix() -> list[tuple[str, AblationConfig]]:
    """The sixteen standard configurations: exposition-injection rows with
    and without distillation, score-factor rows, and feature subsets."""
    rows = [
        ("full", AblationConfig()),
        ("no-exposition-mem", AblationConfig(deem=False)),
        ("no-exposition-vec", AblationConfig(deeav=False)),
        ("no-distill", AblationConfig(distill=False)),
        ("no-distill-no-exposition-mem", AblationConfig(distill=False, deem=False)),
        ("no-distill-no-exposition-vec", AblationConfig(distill=False, deeav=False)),
        ("no-exp-aware-climax", AblationConfig(exp_aware_climax=False)),
        ("no-exp-aware-option", AblationConfig(exp_aware_option=False)),
        ("no-exp-aware-both", AblationConfig(exp_aware_climax=False,
                                             exp_aware_option=False)),
    ]
    for features in ("c", "s", "m", "cs", "cm", "sm", "csm"):
        rows.append((f"features-{features}", AblationConfig(features=features)))
    return rows


def cmd_ablate(args) -> int:
    stories = _load_stories(args)
    if args.test:
        if not os.path.exists(args.test):
            raise SystemExit2(f"test file not found: {args.test}")
        test_stories = load_rocstories(args.test)
    elif args.synthetic:
        test_stories = gen_synthetic(max(args.synthetic // 2, 10),
                                     seed=args.seed + 1)
    else:
        test_stories = None
    annotations = load_annotations(args.annotations) if args.annotations else None
    base_config = _config_from_args(args)
    vocab_stories = stories + (test_stories or [])
    matrix = default_ablation_matrix()
    if args.configs:
        wanted = set(args.configs.split(","))
        unknown = wanted - {name for name, _ in matrix}
        if unknown:
            raise SystemExit2(f"unknown ablation configs: {sorted(unknown)}")
        matrix = [(n, a) for n, a in matrix if n in wanted]

    train_part, dev_part = split_holdout(stories, args.seed)
    out_rows = []
    for name, ablation in matrix:
        config = replace(base_config, ablation=ablation)
        try:
            vocab = build_vocab(vocab_stories, embedding_file=args.embeddings,
                                d_word=args.word_dim, include_oov=True,
                                seed=args.seed)
            result = train(train_part, dev_part, config, vocab, annotations)
            test_acc = ""
            if test_stories:
                test_acc = f"{evaluate(test_stories, result.checkpoint, annotations).accuracy:.4f}"
            out_rows.append([name, "ok", f"{result.checkpoint.best_dev_acc:.4f}",
                             test_acc, result.checkpoint.params.count()])
            print(f"{name}: dev {result.checkpoint.best_dev_acc:.4f}"
                  + (f", test {test_acc}" if test_acc else ""))
        except Exception as exc:  # record the failure, keep going
            out_rows.append([name, f"error: {exc}", "", "", ""])
            print(f"{name}: FAILED ({exc})", file=sys.stderr)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "status", "dev_acc", "test_acc", "param_count"])
        w.writerows(out_rows)
    print(f"ablation table: {args.out}")
    return 0


def cmd_visualize(args) -> int:
    if not os.path.exists(args.checkpoint):
        raise SystemExit2(f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    stories = _load_stories(args)
    annotations = load_annotations(args.annotations) if args.annotations else None
    paths = dump_story_heatmaps(ckpt, stories, args.story_id, args.ending,
                                args.out, annotations)
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="storycloze",
        description="Train and inspect the story-ending matching network.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on labeled stories")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="predictions.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train the ablation matrix, emit a CSV")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--test", help="held-out labeled CSV for test accuracy")
    p.add_argument("--configs", help="comma-separated subset of config names")
    p.add_argument("--out", default="ablation.csv")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("visualize", help="emit per-turn memory heatmaps")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--story-id", required=True)
    p.add_argument("--ending", type=int, default=1, choices=[1, 2])
    p.add_argument("--out", default="heatmaps")
    p.set_defaults(func=cmd_visualize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except UnknownStoryIdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
