"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration problems, 2 bad input
data or files, 3 numeric failure during computation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import PRESETS, TrainConfig
from .corpus import (SYNTH_TASKS, read_features, read_lines,
                     synthesize_corpus)
from .errors import (ConfigError, DimensionError, FormatError, InputError,
                     NumericError)
from .evaluation import corpus_bleu, report_retrieval
from .text import BpeModel, Vocabulary, apply_bpe, learn_bpe, tokenize
from .training import train


def _cmd_learn_bpe(args) -> int:
    lines = [tokenize(line) for line in read_lines(args.input)]
    model = learn_bpe(lines, args.merges)
    model.save(args.out)
    print(f"learned {len(model.merges)} merges from {len(lines)} lines "
          f"-> {args.out}")
    return 0


def _cmd_build_vocab(args) -> int:
    bpe = BpeModel.load(args.bpe) if args.bpe else BpeModel([])
    lines = (apply_bpe(bpe, tokenize(line)) for line in read_lines(args.input))
    vocab = Vocabulary.from_corpus(lines)
    vocab.save(args.out)
    print(f"{len(vocab.tokens)} tokens -> {args.out}")
    return 0


def _cmd_synth(args) -> int:
    sizes = synthesize_corpus(
        args.out, args.task, args.train, args.valid, args.test,
        vocab_size=args.vocab_size, min_len=args.min_len,
        max_len=args.max_len, clusters=args.clusters,
        feature_dim=args.feature_dim, noise=args.noise, seed=args.seed)
    print(f"{args.task} corpus in {args.out}: " +
          ", ".join(f"{k} {v}" for k, v in sizes.items()))
    return 0


_TRAIN_OVERRIDES = (
    "seed", "alpha", "lam", "margin", "learning_rate", "batch_size",
    "clip_norm", "patience", "max_epochs", "target_bleu", "valid_beam",
    "bpe_merges", "embed_dim", "hidden_dim", "shared_dim", "att_dim",
    "out_dim", "feature_dim", "preset",
)
_ABLATION_FLAGS = ("text_only", "no_grounding_attention", "no_attention_init")


def _build_config(args) -> TrainConfig:
    if args.config:
        config = TrainConfig.from_json(args.config)
    else:
        config = TrainConfig()
    updates = {}
    for name in _TRAIN_OVERRIDES:
        value = getattr(args, name)
        if value is not None:
            updates[name] = value
    for name in _ABLATION_FLAGS:
        if getattr(args, name):
            updates[name] = True
    if args.data is not None:
        updates["data_dir"] = args.data
    if updates:
        merged = config.to_dict()
        preset = updates.pop("preset", None)
        merged.update(updates)
        if preset is not None:
            merged["preset"] = preset
            for key, value in PRESETS[preset].items():
                if key not in updates:
                    merged[key] = value
        config = TrainConfig.from_dict(merged)
    if config.data_dir is None:
        raise ConfigError("no data directory; pass --data or set it "
                          "in the config file")
    return config


def _print_epoch(stats) -> None:
    print(f"epoch {stats.epoch}: J {stats.joint:.4f} "
          f"J_T {stats.translation:.4f} J_V {stats.grounding:.4f} "
          f"val_bleu {stats.val_bleu:.4f}")


def _cmd_train(args) -> int:
    config = _build_config(args)
    result = train(config, args.out,
                   on_epoch=None if args.quiet else _print_epoch)
    print(f"stopped by {result.stopped_by} after {result.epochs_run} epochs; "
          f"best val_bleu {result.best_val_bleu:.4f} "
          f"at epoch {result.best_epoch}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_translate(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    lines = read_lines(args.input)
    features = None
    if model.grounded:
        if args.features is None:
            raise InputError(
                "this checkpoint is a grounded model; pass --features")
        features = read_features(args.features)
        if features.shape[0] != len(lines):
            raise InputError(
                f"{len(lines)} input lines vs {features.shape[0]} "
                f"feature rows in {args.features}")
    out = []
    for i, line in enumerate(lines):
        feat = None if features is None else features[i]
        out.append(model.translate_line(line, feat, beam_size=args.beam,
                                        max_len=args.max_len))
    text = "\n".join(out) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"{len(out)} translations -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_retrieve(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    lines = read_lines(args.input)
    features = read_features(args.features)
    if features.shape[0] != len(lines):
        raise InputError(f"{len(lines)} input lines vs {features.shape[0]} "
                         f"feature rows in {args.features}")
    ids = [model.src_ids_of_line(line) for line in lines]
    ks = tuple(int(k) for k in args.ks.split(","))
    report = report_retrieval(model, ids, features, ks=ks)
    print(report)
    return 0


def _cmd_eval_bleu(args) -> int:
    hyps = [tokenize(line) for line in read_lines(args.hyp)]
    refs = [tokenize(line) for line in read_lines(args.ref)]
    report = corpus_bleu(hyps, refs, smooth=not args.no_smoothing)
    print(report)
    return 0


def _cmd_experiment(args) -> int:
    config = _build_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [config.seed + k for k in range(args.seeds)]
    scores = []
    for seed in seeds:
        run_cfg = TrainConfig.from_dict({**config.to_dict(), "seed": seed})
        result = train(run_cfg, out_dir / f"seed-{seed}")
        scores.append(result.best_val_bleu)
        print(f"seed {seed}: best val_bleu {result.best_val_bleu:.4f} "
              f"({result.epochs_run} epochs, {result.stopped_by})")
    summary = {
        "seeds": seeds,
        "bleu_values": scores,
        "bleu_mean": float(np.mean(scores)),
        "bleu_std": float(np.std(scores)),
        "config": config.to_dict(),
    }
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
    print(f"mean val_bleu {summary['bleu_mean']:.4f} "
          f"+- {summary['bleu_std']:.4f} over {len(seeds)} seeds")
    print(f"summary: {summary_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vagnmt",
        description="Visually grounded neural machine translation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn-bpe", help="learn subword merges from text")
    p.add_argument("--input", required=True)
    p.add_argument("--merges", type=int, default=500)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_learn_bpe)

    p = sub.add_parser("build-vocab", help="build a vocabulary file")
    p.add_argument("--input", required=True)
    p.add_argument("--bpe", default=None, help="optional merges file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=SYNTH_TASKS, default="copy")
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--valid", type=int, default=50)
    p.add_argument("--test", type=int, default=50)
    p.add_argument("--vocab-size", type=int, default=30)
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--feature-dim", type=int, default=2048)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    def add_config_flags(p):
        p.add_argument("--config", default=None, help="config JSON file")
        p.add_argument("--data", default=None, help="corpus directory")
        p.add_argument("--preset", choices=sorted(PRESETS), default=None)
        for name in _TRAIN_OVERRIDES:
            if name == "preset":
                continue
            kind = float if name in ("alpha", "lam", "margin", "learning_rate",
                                     "clip_norm", "target_bleu") else int
            p.add_argument("--" + name.replace("_", "-"), type=kind,
                           default=None)
        for name in _ABLATION_FLAGS:
            p.add_argument("--" + name.replace("_", "-"), action="store_true")

    p = sub.add_parser("train", help="train a model")
    add_config_flags(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("translate", help="translate text with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--features", default=None, help="feature file")
    p.add_argument("--out", default=None, help="default: stdout")
    p.add_argument("--beam", type=int, default=None,
                   help="default: the beam width the checkpoint trained with")
    p.add_argument("--max-len", type=int, default=None)
    p.set_defaults(func=_cmd_translate)

    p = sub.add_parser("retrieve", help="score bidirectional retrieval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--ks", default="1,5,10")
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("eval-bleu", help="corpus BLEU of hypothesis file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--no-smoothing", action="store_true")
    p.set_defaults(func=_cmd_eval_bleu)

    p = sub.add_parser("experiment", help="train across several seeds")
    add_config_flags(p)
    p.add_argument("--out", required=True, help="experiment directory")
    p.add_argument("--seeds", type=int, default=3,
                   help="number of consecutive seeds, starting at --seed")
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, InputError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
