"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 stage failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional


from .builder import BuildPlan, build
from .bundle import ModelBundle, random_bundle
from .cloner import Strategy, clone
from .corpus import (
    FrequencyTable,
    IngestStats,
    count_substrings,
    count_substrings_sharded,
    count_tokens,
    ingest,
)
from .distill import TrainConfig, train
from .errors import FormatError, StageError, SurgeryError, ValidationError
from .evaluate import aggregate_report, evaluate_sts, load_task_scores, read_sts
from .pipeline import PipelineConfig, run_pipeline
from .segmenter import DEFAULT_MAX_LEN, Segmenter
from .store import PrecomputeStats, QuotaPolicy, TeacherDataset, apply_quota, bundle_encoder, precompute
from .vocab import Vocabulary

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger("tokensurgery")

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE, EXIT_IO = 0, 1, 2, 3
DEFAULT_SEED = 42


def _ints(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed(args) -> int:
    return DEFAULT_SEED if args.seed is None else args.seed


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("VSRG_THREADS")
    return int(env) if env else 1


def cmd_count(args) -> int:
    stats = IngestStats()
    records = ingest(args.input, args.language_field, stats)
    if args.vocab:
        table = count_tokens(records, Segmenter(Vocabulary.load(args.vocab)))
    else:
        table = count_substrings_sharded(records, args.lengths, args.top_n, _threads(args))
    table.save(args.out)
    logger.info("counted %d entries (total %d); skipped %d rows", len(table), table.total_count, stats.skipped)
    return EXIT_OK


def _teacher_vocab(args) -> Vocabulary:
    if args.teacher_vocab:
        return Vocabulary.load(args.teacher_vocab)
    bundle = ModelBundle.load(args.teacher)
    if bundle.vocab is None:
        raise ValidationError("teacher bundle carries no vocabulary; pass --teacher-vocab")
    return bundle.vocab


def cmd_build_vocab(args) -> int:
    plan = BuildPlan(
        monolingual_top_k=args.top_k,
        target_size=args.target_size,
        lengths=args.lengths,
        teacher_vocab=_teacher_vocab(args),
        mono_freq=FrequencyTable.load(args.mono),
        multi_freq=FrequencyTable.load(args.multi) if args.multi else FrequencyTable(),
    )
    build(plan).save(args.out)
    return EXIT_OK


def cmd_encode(args) -> int:
    seg = Segmenter(Vocabulary.load(args.vocab))
    for line in sys.stdin:
        ids = seg.encode(line.rstrip("\n"), args.max_len).ids
        sys.stdout.write(" ".join(map(str, ids)) + "\n")
    return EXIT_OK


def cmd_clone(args) -> int:
    teacher = ModelBundle.load(args.teacher)
    freq = FrequencyTable.load(args.teacher_freq) if args.teacher_freq else None
    student, mapping = clone(teacher, Vocabulary.load(args.vocab), args.strategy, freq)
    student.save(args.out)
    logger.info("cloned onto %d tokens; %d fallback rows", len(mapping), mapping.fallback_count)
    return EXIT_OK


def cmd_precompute(args) -> int:
    teacher = ModelBundle.load(args.teacher)
    if teacher.vocab is None:
        raise ValidationError("teacher bundle carries no vocabulary")
    istats = IngestStats()
    capped = apply_quota(ingest(args.input, args.language_field, istats), QuotaPolicy.parse(args.quota), _seed(args))
    pstats = PrecomputeStats()
    enc = bundle_encoder(teacher, Segmenter(teacher.vocab))
    ds = TeacherDataset.from_records(precompute(capped, enc, args.batch, pstats))
    ds.save(args.out)
    if args.export_tsv:
        ds.export_tsv(args.export_tsv)
    logger.info("stored %d rows (%d skipped on ingest, %d on precompute)", len(ds), istats.skipped, pstats.skipped)
    return EXIT_OK


def cmd_distill(args) -> int:
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch, lr_peak=args.lr, warmup_ratio=args.warmup_ratio,
        weight_decay=args.weight_decay, max_grad_norm=args.clip, checkpoint_every=args.ckpt_every,
        seed=_seed(args), target=args.target, train_backbone=args.train_backbone,
        train_embedding=not args.freeze_embedding,
    )
    bundle = ModelBundle.load(args.model)
    dataset = TeacherDataset.load(args.data)
    train(bundle, dataset, config, out_dir=args.out, resume_from=args.resume)
    return EXIT_OK


def cmd_eval_sts(args) -> int:
    bundle = ModelBundle.load(args.model)
    vocab = Vocabulary.load(args.vocab) if args.vocab else bundle.vocab
    if vocab is None:
        raise ValidationError("no vocabulary: pass --vocab or use a bundle that carries one")
    result = evaluate_sts(bundle, read_sts(args.pairs), Segmenter(vocab))
    text = result.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    report = aggregate_report(load_task_scores(args.scores))
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _override(text: str):
    """Parse ``section.key=value``; the value is read as a TOML literal, else kept as a string."""
    key, sep, raw = text.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot or not section or not name:
        raise argparse.ArgumentTypeError(f"expected section.key=value, got {text!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return section, name, value


def cmd_pipeline(args) -> int:
    overrides: dict = {}
    for section, name, value in args.set or []:
        overrides.setdefault(section, {})[name] = value
    if args.output_dir:
        overrides.setdefault("paths", {})["output_dir"] = str(Path(args.output_dir).resolve())
    config = PipelineConfig.from_toml(args.config, overrides)
    if args.seed is not None:
        config.seed = args.seed
        config.train = dataclasses.replace(config.train, seed=args.seed)
    manifest = run_pipeline(config)
    sys.stdout.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_toy_teacher(args) -> int:
    """Build a stand-in teacher: substring vocabulary over a corpus plus random weights."""
    records = list(ingest(args.input, args.language_field))
    table = count_substrings(records, args.lengths, args.top_n)
    surfaces = [t for t, _ in table.ranked()][: max(0, args.vocab_size - 260)]
    vocab = Vocabulary.from_regular(surfaces)
    random_bundle(vocab, args.dim, args.hidden, seed=_seed(args), max_len=args.max_len).save(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tokensurgery", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
    parser.add_argument("--threads", type=int, default=None, help="worker count (env VSRG_THREADS)")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        return p

    p = add("count", cmd_count, "frequency table from a corpus")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lengths", type=_ints, default=[1, 2, 3, 4])
    p.add_argument("--top-n", type=int, default=100_000)
    p.add_argument("--vocab", help="count segmenter tokens over this vocabulary instead of substrings")
    p.add_argument("--language-field")

    p = add("build-vocab", cmd_build_vocab, "hybrid vocabulary from frequency tables")
    p.add_argument("--mono", required=True)
    p.add_argument("--multi")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--teacher")
    g.add_argument("--teacher-vocab")
    p.add_argument("--target-size", type=int, required=True)
    p.add_argument("--top-k", type=int, required=True)
    p.add_argument("--lengths", type=_ints, default=[1, 2, 3, 4])
    p.add_argument("--out", required=True)

    p = add("encode", cmd_encode, "encode stdin lines to token ids")
    p.add_argument("--vocab", required=True)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)

    p = add("clone", cmd_clone, "clone a teacher bundle onto a new vocabulary")
    p.add_argument("--teacher", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default="mean")
    p.add_argument("--teacher-freq", help="teacher token frequencies for --strategy weighted")
    p.add_argument("--out", required=True)

    p = add("precompute", cmd_precompute, "precompute teacher embeddings")
    p.add_argument("--teacher", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--quota", default="tr=100000,en=100000,default=10000")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--language-field")
    p.add_argument("--export-tsv")
    p.add_argument("--out", required=True)

    p = add("distill", cmd_distill, "train the student against stored teacher vectors")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", choices=["final", "pre_dense"], default="final")
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--warmup-ratio", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--ckpt-every", type=int, default=100)
    p.add_argument("--train-backbone", action="store_true")
    p.add_argument("--freeze-embedding", action="store_true")
    p.add_argument("--resume")
    p.add_argument("--out", required=True)

    p = add("eval-sts", cmd_eval_sts, "Pearson/Spearman on an STS pair file")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out")

    p = add("report", cmd_report, "macro-average task scores by category")
    p.add_argument("--scores", required=True)
    p.add_argument("--out")

    p = add("pipeline", cmd_pipeline, "run all stages from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--set", action="append", type=_override, metavar="SECTION.KEY=VALUE",
                   help="override a config value, e.g. --set distill.lr_peak=1e-4 (repeatable)")

    p = add("toy-teacher", cmd_toy_teacher, "random stand-in teacher bundle for desk runs")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--vocab-size", type=int, default=2048)
    p.add_argument("--lengths", type=_ints, default=[1, 2, 3, 4, 5])
    p.add_argument("--top-n", type=int, default=100_000)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    p.add_argument("--language-field")
    p.add_argument("--out", required=True)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except StageError as exc:
        logger.error("stage failed: %s", exc)
        return EXIT_STAGE
    except (ValidationError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_VALIDATION
    except (OSError, FormatError) as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO
    except SurgeryError as exc:
        logger.error("%s", exc)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
