"""Command-line interface.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError

log = logging.getLogger("mcg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _training_args(p):
    p.add_argument("--config", help="config file (default: $MCG_CONFIG)")
    p.add_argument("--preset", choices=["toy"], help="start from a bundled preset instead of full-size defaults")
    p.add_argument("--manifest", help="training manifest (overrides data.manifest)")
    p.add_argument("--vocab", help="vocabulary file (overrides data.vocab)")
    p.add_argument("--steps", type=int, help="overrides train.steps")
    p.add_argument("--init", help="checkpoint to initialize parameters from")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--history", help="write per-step losses here (JSON lines)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="extra config override")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mcg", description="Generative video question answering.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    _training_args(sub.add_parser("pretrain", help="train with the contrastive, matching and LM losses"))
    _training_args(sub.add_parser("finetune", help="train with the LM loss only"))

    p = sub.add_parser("answer", help="answer one question about one video")
    p.add_argument("--video", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=["greedy", "beam"])
    p.add_argument("--beam-width", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--choices", nargs="+", help="score these candidates instead of generating")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="write the report here as well as printing it")
    p.add_argument("--predictions", help="write per-record predictions (JSON lines)")
    p.add_argument("--taxonomy", help="taxonomy file for WUPS (default: bundled toy taxonomy)")
    p.add_argument("--mode", choices=["greedy", "beam"])
    p.add_argument("--beam-width", type=int)
    p.add_argument("--max-len", type=int)

    p = sub.add_parser("gen-synthetic", help="write the synthetic moving-square dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--resolution", type=int, default=32)

    p = sub.add_parser("inspect-checkpoint", help="list the arrays stored in a checkpoint")
    p.add_argument("--checkpoint", required=True)
    return parser


def _train(args, stage):
    from .checkpoint import load_checkpoint, save_checkpoint
    from .config import load_config, toy_config
    from .manifest import load_manifest
    from .text import Vocabulary, toy_vocabulary
    from .training import Trainer, answer_classes_from, build_model

    overrides = {"train.stage": stage}
    if args.manifest:
        overrides["data.manifest"] = args.manifest
    if args.vocab:
        overrides["data.vocab"] = args.vocab
    if args.steps is not None:
        overrides["train.steps"] = str(args.steps)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.preset == "toy":
        cfg = toy_config()
        for key, value in overrides.items():
            cfg.set(key, value)
        cfg.validate()
    else:
        cfg = load_config(args.config, overrides)
    if not cfg.data.manifest:
        raise UsageError("no training manifest: pass --manifest or set data.manifest")
    records = load_manifest(cfg.data.manifest)
    vocab = Vocabulary.load(cfg.data.vocab) if cfg.data.vocab else toy_vocabulary()
    classes = answer_classes_from(records) if cfg.model.answer_head == "classifier" else None
    model = build_model(cfg, vocab, classes)
    if args.init:
        init = load_checkpoint(args.init, with_optimizer=False)
        model.load_state_dict(init.model.state_dict())
    trainer = Trainer(model, records, cfg)
    trainer.run()
    if args.history:
        import json

        with open(args.history, "w", encoding="utf-8") as fh:
            for step, bundle in enumerate(trainer.history):
                fh.write(json.dumps({"step": step, **bundle.as_dict()}) + "\n")
    save_checkpoint(args.out, model, trainer.optimizer, cfg, trainer.step)
    last = trainer.history[-1].as_dict() if trainer.history else {}
    print(f"{stage}: {trainer.step} steps, final " + " ".join(f"{k}={v:.4f}" for k, v in last.items()))
    print(f"checkpoint written to {args.out}")


def _decode_overrides(cfg, args):
    if args.mode:
        cfg.decode.mode = args.mode
    if args.beam_width:
        cfg.decode.beam_width = args.beam_width
    if args.max_len:
        cfg.decode.max_len = args.max_len
    cfg.validate()


def _answer(args):
    from .checkpoint import load_checkpoint
    from .model import generate_answer, score_choices
    from .sampling import load_clip

    model = load_checkpoint(args.checkpoint, with_optimizer=False).model
    cfg = model.cfg
    _decode_overrides(cfg, args)
    model.eval()
    clip = load_clip(args.video, cfg.frames, cfg.resolution, cfg.data.mean, cfg.data.std, mode="eval",
                     ratio=cfg.data.head_ratio, allow_repeat=cfg.data.allow_repeat)
    if args.choices:
        best, probs = score_choices(model, args.question, args.choices, clip.frames)
        for i, (c, p) in enumerate(zip(args.choices, probs)):
            print(f"{'*' if i == best else ' '} {p:.4f}  {c}")
        return
    ans = generate_answer(model, args.question, clip.frames)
    print(ans.text + ("  [truncated]" if ans.truncated else ""))


def _evaluate(args):
    import json

    from .checkpoint import load_checkpoint
    from .evaluation import evaluate
    from .manifest import load_manifest
    from .metrics import Taxonomy

    model = load_checkpoint(args.checkpoint, with_optimizer=False).model
    _decode_overrides(model.cfg, args)
    taxonomy = Taxonomy.load(args.taxonomy) if args.taxonomy else None
    report = evaluate(model, load_manifest(args.manifest), taxonomy=taxonomy)
    text = report.to_text()
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    if args.predictions:
        with open(args.predictions, "w", encoding="utf-8") as fh:
            for row in report.predictions:
                fh.write(json.dumps(row) + "\n")


def _gen_synthetic(args):
    from .synthetic import make_synthetic_dataset

    manifest = make_synthetic_dataset(args.out, pairs=args.pairs, frames=args.frames,
                                      resolution=args.resolution, seed=args.seed)
    print(f"wrote {args.pairs} pairs to {manifest}")


def _inspect(args):
    from .checkpoint import list_index

    for entry in list_index(args.checkpoint):
        shape = "x".join(str(s) for s in entry["shape"]) or "scalar"
        print(f"{entry['name']}\t{shape}\t{entry['dtype']}")


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    handlers = {
        "pretrain": lambda a: _train(a, "pretrain"),
        "finetune": lambda a: _train(a, "finetune"),
        "answer": _answer,
        "evaluate": _evaluate,
        "gen-synthetic": _gen_synthetic,
        "inspect-checkpoint": _inspect,
    }
    try:
        handlers[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"mcg {args.command}: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except Exception as exc:
        print(f"mcg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
