"""Command-line interface: build-vocab, train, translate, score.

Flag values resolve in precedence order: explicit command-line flag,
then a JSON config file (--config), then checkpoint-embedded model
settings, then the built-in defaults below. Exit codes: 0 success,
1 usage or configuration error, 2 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .data import ParallelCorpus, Vocabulary, bleu, build_vocab
from .decoding import DecodeConfig, translate_batch
from .errors import ConfigError, ToolkitError, UsageError
from .model import Model, ModelConfig, load_checkpoint
from .tensor import Rng
from .training import TrainConfig, Trainer

DEFAULTS = {
    "embedding_size": 512,
    "hidden_size": 512,
    "depth": 2,
    "dropout": 0.2,
    "label_smoothing": 0.1,
    "lr": 1.0,
    "lr_decay": 0.7,
    "patience": 12,
    "beam_size": 10,
    "length_penalty": 0.6,
    "batch_size": 64,
    "seed": 1,
    "max_len": 100,
    "clip_norm": 5.0,
    "eval_interval": 400_000,
    "vocab_size": 37_000,
    "n_best": 1,
}


def _add_flag(parser, name, key, type_, help_text):
    parser.add_argument(name, dest=key, type=type_, default=None,
                        help=f"{help_text} (default: {DEFAULTS[key]})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minmt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    pv = sub.add_parser("build-vocab", help="build a shared vocabulary from tokenized corpora")
    pv.add_argument("--train-src", required=True)
    pv.add_argument("--train-tgt", required=True)
    pv.add_argument("--vocab", required=True, help="output vocabulary file")
    _add_flag(pv, "--vocab-size", "vocab_size", int, "total vocabulary cap incl. reserved tokens")

    pt = sub.add_parser("train", help="train a model to termination")
    pt.add_argument("--train-src", required=True)
    pt.add_argument("--train-tgt", required=True)
    pt.add_argument("--dev-src", required=True)
    pt.add_argument("--dev-tgt", required=True)
    pt.add_argument("--vocab", required=True)
    pt.add_argument("--model", required=True, help="checkpoint output path (best model)")
    pt.add_argument("--config", default=None, help="JSON file of flag values")
    pt.add_argument("--log", default=None, help="also append eval log lines to this file")
    _add_flag(pt, "--embedding-size", "embedding_size", int, "embedding dimension")
    _add_flag(pt, "--hidden-size", "hidden_size", int, "hidden state dimension")
    _add_flag(pt, "--depth", "depth", int, "encoder/decoder layer count")
    _add_flag(pt, "--dropout", "dropout", float, "dropout rate on inter-layer hidden states")
    _add_flag(pt, "--label-smoothing", "label_smoothing", float, "label smoothing mass")
    _add_flag(pt, "--lr", "lr", float, "SGD learning rate")
    _add_flag(pt, "--lr-decay", "lr_decay", float, "learning-rate decay factor")
    _add_flag(pt, "--patience", "patience", int, "non-improving evals before a decay")
    _add_flag(pt, "--batch-size", "batch_size", int, "sentences per batch")
    _add_flag(pt, "--seed", "seed", int, "random seed")
    _add_flag(pt, "--max-len", "max_len", int, "training sentence length filter")
    _add_flag(pt, "--clip-norm", "clip_norm", float, "global gradient-norm clip (<=0 disables)")
    _add_flag(pt, "--eval-interval", "eval_interval", int, "sentences between dev evaluations")
    pt.add_argument("--max-epochs", type=int, default=None, help="optional epoch cap")
    pt.add_argument("--no-output-tanh", action="store_true",
                    help="drop the tanh on the output projection logits")
    pt.add_argument("--shared-embeddings", action="store_true",
                    help="share one embedding table between source and target")

    px = sub.add_parser("translate", help="translate a tokenized file")
    px.add_argument("--model", required=True)
    px.add_argument("--input", required=True)
    px.add_argument("--output", required=True)
    px.add_argument("--vocab", default=None, help="optional vocabulary cross-check")
    px.add_argument("--config", default=None, help="JSON file of flag values")
    _add_flag(px, "--beam-size", "beam_size", int, "beam width")
    _add_flag(px, "--length-penalty", "length_penalty", float, "length penalty alpha")
    _add_flag(px, "--max-len", "max_len", int, "hard cap on output length")
    _add_flag(px, "--n-best", "n_best", int, "write <output>.nbest with this many candidates")
    _add_flag(px, "--seed", "seed", int, "random seed")

    ps = sub.add_parser("score", help="corpus BLEU of hypothesis vs reference")
    ps.add_argument("--hyp", required=True, help="hypothesis file")
    ps.add_argument("--ref", required=True, help="reference file")

    return parser


def _load_config_file(path):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        values = json.load(f)
    unknown = set(values) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return values


def _resolve(args, file_values, key):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_values:
        return file_values[key]
    return DEFAULTS[key]


def _require_files(*paths):
    for p in paths:
        if p is not None and not os.path.exists(p):
            raise UsageError(f"file not found: {p}")


def _read_lines(path):
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def cmd_build_vocab(args) -> int:
    _require_files(args.train_src, args.train_tgt)
    cap = _resolve(args, {}, "vocab_size")
    vocab = build_vocab([args.train_src, args.train_tgt], cap)
    vocab.save(args.vocab)
    print(f"wrote {len(vocab)} tokens to {args.vocab}")
    return 0


def cmd_train(args) -> int:
    _require_files(args.train_src, args.train_tgt, args.dev_src, args.dev_tgt, args.vocab)
    fv = _load_config_file(args.config)
    vocab = Vocabulary.load(args.vocab)
    model_cfg = ModelConfig(
        vocab_size=len(vocab),
        embedding_size=_resolve(args, fv, "embedding_size"),
        hidden_size=_resolve(args, fv, "hidden_size"),
        depth=_resolve(args, fv, "depth"),
        dropout=_resolve(args, fv, "dropout"),
        output_tanh=not args.no_output_tanh,
        shared_embeddings=args.shared_embeddings,
    )
    clip = _resolve(args, fv, "clip_norm")
    train_cfg = TrainConfig(
        learning_rate=_resolve(args, fv, "lr"),
        decay_factor=_resolve(args, fv, "lr_decay"),
        label_smoothing=_resolve(args, fv, "label_smoothing"),
        patience=_resolve(args, fv, "patience"),
        eval_interval_sentences=_resolve(args, fv, "eval_interval"),
        grad_clip_norm=None if clip is not None and clip <= 0 else clip,
        batch_size=_resolve(args, fv, "batch_size"),
        max_len=_resolve(args, fv, "max_len"),
        max_epochs=args.max_epochs,
        seed=_resolve(args, fv, "seed"),
    )
    train_corpus = ParallelCorpus.load(args.train_src, args.train_tgt)
    dev_corpus = ParallelCorpus.load(args.dev_src, args.dev_tgt)
    model = Model.new(model_cfg, Rng(train_cfg.seed))

    log_streams = [sys.stdout]
    log_file = open(args.log, "a", encoding="utf-8") if args.log else None
    if log_file:
        log_streams.append(log_file)

    class _Tee:
        def write(self, text):
            for s in log_streams:
                s.write(text)

        def flush(self):
            for s in log_streams:
                s.flush()

    try:
        trainer = Trainer(model, vocab, train_corpus, dev_corpus, train_cfg,
                          model_path=args.model, log_stream=_Tee())
        final = trainer.train()
    finally:
        if log_file:
            log_file.close()
    print(f"training done: step {final.step}, best dev entropy {final.best_dev_entropy:.6f}")
    return 0


def cmd_translate(args) -> int:
    _require_files(args.model, args.input)
    fv = _load_config_file(args.config)
    model, vocab_tokens = load_checkpoint(args.model)
    if args.vocab is not None:
        _require_files(args.vocab)
        external = Vocabulary.load(args.vocab)
        if len(external) != len(vocab_tokens):
            raise ConfigError(
                f"vocabulary mismatch: file {args.vocab} has {len(external)} tokens, "
                f"checkpoint has {len(vocab_tokens)}")
    vocab = Vocabulary.from_tokens(vocab_tokens)
    max_len = getattr(args, "max_len", None)
    if max_len is None and "max_len" in fv:
        max_len = fv["max_len"]
    cfg = DecodeConfig(
        beam_size=_resolve(args, fv, "beam_size"),
        length_penalty_alpha=_resolve(args, fv, "length_penalty"),
        max_len=max_len,
        n_best=_resolve(args, fv, "n_best"),
    )
    lines = _read_lines(args.input)
    outputs, n_best_records = translate_batch(lines, model, vocab, cfg)
    with open(args.output, "w", encoding="utf-8") as f:
        for line in outputs:
            f.write(line + "\n")
    if cfg.n_best > 1:
        with open(args.output + ".nbest", "w", encoding="utf-8") as f:
            for rec in n_best_records:
                f.write(rec + "\n")
    return 0


def cmd_score(args) -> int:
    _require_files(args.hyp, args.ref)
    hyp = [line.split() for line in _read_lines(args.hyp)]
    ref = [line.split() for line in _read_lines(args.ref)]
    if len(hyp) != len(ref):
        raise UsageError(
            f"line counts differ: {args.hyp} has {len(hyp)}, {args.ref} has {len(ref)}")
    print(f"{bleu(hyp, ref):.2f}")
    return 0


COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "translate": cmd_translate,
    "score": cmd_score,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
