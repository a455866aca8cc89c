"""Command-line entry point.

Every subcommand reads and writes artifacts in ``--out``; the phases can be
run one by one (pretrain-gen, pretrain-dis, adversarial) or all at once with
``run``.
"""
import argparse
import json
import logging
import os
import shutil
import sys

from . import pipeline
from .config import load_config
from .corpus import Grammar, bundled_grammar_path, encode_all, load_jsonl, save_jsonl, synth_corpus, stats
from .evaluation import auc, dump_samples, held_out_eval, write_classifications, write_pr_csv

logger = logging.getLogger("acgan_re")


def _common():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="INI config file")
    parent.add_argument("--seed", type=int, metavar="N", default=argparse.SUPPRESS)
    parent.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="artifact directory")
    parent.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return parent


def build_parser():
    common = _common()
    ap = argparse.ArgumentParser(prog="acgan-re", description=__doc__.splitlines()[0], parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", parents=[common], help="sample train/test corpora from a grammar")
    p.add_argument("--grammar", metavar="PATH", help="grammar JSON (default: bundled)")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)

    sub.add_parser("pretrain-gen", parents=[common], help="generator MLE pretraining")
    sub.add_parser("pretrain-dis", parents=[common], help="generate fakes, then pretrain the discriminator")
    sub.add_parser("adversarial", parents=[common], help="joint adversarial training")
    sub.add_parser("run", parents=[common], help="all training phases in order")

    p = sub.add_parser("generate", parents=[common], help="dump generated sentences per relation")
    p.add_argument("--per-relation", type=int, default=10)
    p.add_argument("--model", choices=("auto", "pretrained", "adversarial"), default="auto")

    p = sub.add_parser("eval", parents=[common], help="held-out PR curve and AUC")
    p.add_argument("--model", choices=("auto", "pretrained", "adversarial"), default="auto")
    p.add_argument("--input", metavar="JSONL", help="also classify these sentences")

    sub.add_parser("compare", parents=[common], help="baseline vs augmented classifier AUC")
    return ap


def _stem(ws, base, which):
    adv = base + "-adv"
    if which == "adversarial" or (which == "auto" and os.path.exists(ws.path(adv + ".ckpt"))):
        return adv
    return base


def cmd_synth_corpus(ws, args):
    cfg = ws.cfg
    path = args.grammar or cfg.grammar or bundled_grammar_path()
    grammar = Grammar.load(path)
    schema = grammar.schema
    train = synth_corpus(grammar, args.n_train or cfg.synth_train, cfg.seed)
    test = synth_corpus(grammar, args.n_test or cfg.synth_test, cfg.seed + pipeline.TEST_SEED_OFFSET)
    save_jsonl(ws.path("train.jsonl"), train, schema)
    save_jsonl(ws.path("test.jsonl"), test, schema)
    shutil.copyfile(path, ws.path("grammar.json"))
    s = stats(train, schema)
    print(f"wrote {len(train)} train / {len(test)} test sentences to {ws.out} ({s})")


def cmd_phase(*phases):
    def run(ws, args):
        for phase in phases:
            pipeline.run_phase(ws, phase)
            print(f"{phase}: done")

    return run


def cmd_run(ws, args):
    rows = pipeline.run_pipeline(ws.cfg, ws.out)
    print(f"pipeline finished: {len(rows)} metric rows in {ws.path('metrics.csv')}")


def cmd_generate(ws, args):
    ws.require("generator.ckpt", "generate")
    gen = pipeline.load_model(ws.out, _stem(ws, "generator", args.model))
    rng = pipeline.phase_rng(ws.cfg.seed, "generate")
    sents = dump_samples(
        gen, ws.vocab(), ws.schema(), args.per_relation, ws.path("samples.txt"), rng, ws.cfg.temperature,
        jsonl_path=ws.path("samples.jsonl"),
    )
    print(f"wrote {len(sents)} sentences to {ws.path('samples.txt')}")


def cmd_eval(ws, args):
    ws.require("discriminator.ckpt", "eval")
    disc = pipeline.load_model(ws.out, _stem(ws, "discriminator", args.model))
    vocab = ws.vocab()
    schema = ws.schema()
    _, _, test = ws.data()
    test = encode_all([s for s in test if len(s) <= ws.cfg.max_len], vocab, ws.cfg.max_len)
    points = held_out_eval(disc, test, schema)
    write_pr_csv(ws.path("pr.csv"), points)
    area = auc(points)
    with open(ws.path("eval.json"), "w", newline="\n") as fh:
        fh.write(json.dumps({"auc": area, "points": len(points), "test_sentences": len(test)}, indent=2) + "\n")
    if args.input:
        inputs = encode_all(load_jsonl(args.input, schema), vocab, ws.cfg.max_len)
        write_classifications(ws.path("classifications.jsonl"), disc, inputs)
    print(f"AUC {area:.4f} over {len(test)} test sentences")


def cmd_compare(ws, args):
    report = pipeline.compare_augmentation(ws.cfg)
    with open(ws.path("report.json"), "w", newline="\n") as fh:
        fh.write(report.to_json())
    print(
        f"baseline {report.baseline_mean:.4f} augmented {report.augmented_mean:.4f} "
        f"delta {report.mean_delta:+.4f} ({report.relative_delta_percent:+.2f}% relative)"
    )


COMMANDS = {
    "synth-corpus": cmd_synth_corpus,
    "pretrain-gen": cmd_phase("pretrain-gen"),
    "pretrain-dis": cmd_phase("generate-fakes", "pretrain-dis"),
    "adversarial": cmd_phase("adversarial"),
    "run": cmd_run,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(getattr(args, "config", None))
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 2
    if hasattr(args, "seed"):
        cfg = cfg.with_(seed=args.seed)
    out = getattr(args, "out", "out")
    os.makedirs(out, exist_ok=True)
    ws = pipeline.Workspace(cfg, out)
    try:
        COMMANDS[args.command](ws, args)
    except pipeline.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
