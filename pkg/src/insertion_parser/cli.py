"""Command-line entry point.

    insertion-parser synth --count 5000 --seed 7 --out train.jsonl
    insertion-parser train --data train.jsonl --ckpt m.ckpt --max-steps 6000
    insertion-parser eval --data test.jsonl --ckpt m.ckpt --mode input-src
    insertion-parser parse --ckpt m.ckpt --penalty 0.5 "some query words"
    insertion-parser gradcheck --seed 0

Reports go to stdout as JSON.  Exit status is 0 on success, 2 on a usage
error and 1 when the command itself fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import parse_ir as ir
from .checkpoint import load_model
from .corpus import GrammarSpec, build_vocab, default_grammar, derive_language, generate_synthetic, load_jsonl, save_jsonl
from .decoding import DecodeConfig, ModelScorer, decode, evaluate
from .model import ModelConfig
from .training import TrainConfig, build_model, fit, gradcheck_model

REPORT_FIELDS = ("em", "ic", "avg_steps", "tokens_per_step", "invalid_rate")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_float(text):
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return value


def _decode_flags(p):
    p.add_argument("--mode", choices=("scratch", "input-src"), default="scratch")
    p.add_argument("--penalty", type=_nonneg_float, default=0.0)
    p.add_argument("--max-steps", type=_positive_int, default=64, help="decoding step cap")
    p.add_argument("--translate", type=Path, help="JSON word map applied to queries before encoding")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="insertion-parser")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus as JSON lines")
    p.add_argument("--spec", type=Path, help="grammar JSON (default: built-in grammar)")
    p.add_argument("--count", type=_positive_int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--language", choices=("A", "B"), default="A",
                   help="B derives a lexicon-swapped language from the grammar")
    p.add_argument("--word-order", choices=("identity", "reverse", "reverse_spans"), default="reverse_spans")
    p.add_argument("--alignment-out", type=Path, help="where to write the B-to-A word map")
    p.add_argument("--out", type=Path, help="output file (default: stdout)")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--dev", type=Path)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--config", type=Path, help="key=value training config; flags override it")
    p.add_argument("--metrics", type=Path, help="JSON-lines metrics output")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=_positive_int)
    p.add_argument("--batch-size", type=_positive_int)
    p.add_argument("--weighting", choices=("tree", "uniform"))
    p.add_argument("--tau", type=float)
    p.add_argument("--copy", choices=("on", "off"), default="on")
    p.add_argument("--input-src-training", action="store_true")
    p.add_argument("--d-model", type=_positive_int, default=64)
    p.add_argument("--enc-layers", type=_positive_int, default=2)
    p.add_argument("--dec-layers", type=_positive_int, default=2)
    p.add_argument("--heads", type=_positive_int, default=4)
    p.add_argument("--dropout", type=float, default=0.0)

    p = sub.add_parser("eval", help="decode a corpus and report EM / IC / step statistics")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--ckpt", type=Path, required=True)
    _decode_flags(p)

    p = sub.add_parser("parse", help="parse one query")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("query", help="whitespace-separated query")
    _decode_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss stack")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=_positive_int, default=1, help="number of consecutive seeds")
    p.add_argument("--d", type=_positive_int, default=8)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--copy", choices=("on", "off"), default="on")
    return parser


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")


def _decode_config(args) -> DecodeConfig:
    return DecodeConfig(mode=args.mode, penalty=args.penalty, max_steps=args.max_steps)


def _translate(args):
    return json.loads(args.translate.read_text()) if args.translate else None


def cmd_synth(args) -> int:
    spec = GrammarSpec.load(args.spec) if args.spec else default_grammar()
    if args.language == "B":
        spec, alignment = derive_language(spec, word_order=args.word_order, seed=args.seed)
        if args.alignment_out:
            args.alignment_out.write_text(json.dumps(alignment, indent=1, sort_keys=True))
    examples = generate_synthetic(spec, args.count, args.seed)
    if args.out:
        save_jsonl(examples, args.out)
        _emit({"written": len(examples), "out": str(args.out)})
    else:
        for ex in examples:
            sys.stdout.write(json.dumps(ex.to_json()) + "\n")
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig.from_text(args.config.read_text()) if args.config else TrainConfig()
    overrides = {"seed": args.seed, "max_steps": args.max_steps, "batch_size": args.batch_size}
    if args.input_src_training:
        overrides["input_src_training"] = True
    if args.weighting == "uniform":
        overrides["weighting"] = "uniform"
    elif args.weighting == "tree" or args.tau is not None:
        overrides["weighting"] = f"tree:{args.tau if args.tau is not None else 1.0}"
    cfg = TrainConfig.from_dict({**cfg.to_dict(), **{k: v for k, v in overrides.items() if v is not None}})
    train = load_jsonl(args.data)
    dev = load_jsonl(args.dev) if args.dev else None
    vocab = build_vocab(list(train) + list(dev or []))
    mcfg = ModelConfig(d_enc=args.d_model, d_dec=args.d_model, enc_layers=args.enc_layers,
                       dec_layers=args.dec_layers, heads=args.heads, dropout=args.dropout,
                       copy_enabled=args.copy == "on", seed=cfg.seed)
    model = build_model(vocab, mcfg)
    ckpt = fit(model, train, vocab, cfg, dev=dev, metrics_path=args.metrics, checkpoint_path=args.ckpt)
    _emit({"ckpt": str(args.ckpt), "steps": ckpt.step, "final_loss": ckpt.metrics["loss"],
           "dev_em": ckpt.metrics["dev_em"], "skipped_lines": train.skip_count})
    return 0


def cmd_eval(args) -> int:
    model, ckpt = load_model(args.ckpt)
    data = load_jsonl(args.data)
    report = evaluate(ModelScorer(model, ckpt.vocab, translate=_translate(args)), data, _decode_config(args))
    report["skipped_lines"] = data.skip_count
    _emit(report)
    return 0


def cmd_parse(args) -> int:
    model, ckpt = load_model(args.ckpt)
    words = args.query.split()
    if not words:
        raise ValueError("empty query")
    pred, stats = decode(ModelScorer(model, ckpt.vocab, translate=_translate(args)), words, _decode_config(args))
    _emit({"parse": ir.render(pred), "steps": stats.steps_used, "model_calls": stats.model_calls,
           "tokens_per_step": stats.tokens_per_step, "terminated": stats.terminated, "valid": stats.valid})
    return 0


def cmd_gradcheck(args) -> int:
    errors = {str(s): gradcheck_model(seed=s, d=args.d, epsilon=args.epsilon, copy_enabled=args.copy == "on")
              for s in range(args.seed, args.seed + args.seeds)}
    worst = max(errors.values())
    _emit({"max_rel_error": worst, "per_seed": errors, "passed": worst < 1e-4})
    return 0 if worst < 1e-4 else 1


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "parse": cmd_parse,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports the offending flag itself
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes exit status 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
