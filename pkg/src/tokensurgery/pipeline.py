"""End-to-end pipeline: build-vocab, clone, precompute, distill, eval-sts."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .builder import BuildPlan, build
from .bundle import ModelBundle
from .cloner import Strategy, clone
from .corpus import CorpusRecord, IngestStats, count_substrings, ingest
from .distill import TrainConfig, train
from .errors import StageError, SurgeryError, ValidationError
from .evaluate import evaluate_sts, read_sts
from .segmenter import Segmenter
from .store import PrecomputeStats, QuotaPolicy, TeacherDataset, apply_quota, bundle_encoder, precompute

logger = logging.getLogger(__name__)

STAGES = ("build-vocab", "clone", "precompute", "distill", "eval-sts")


@dataclass
class PipelineConfig:
    mono_corpus: Path
    multi_corpus: Path
    teacher: Path
    sts_pairs: Path
    output_dir: Path
    distill_corpus: Optional[Path] = None
    target_size: int = 1024
    monolingual_top_k: int = 256
    lengths: List[int] = field(default_factory=lambda: [1, 2, 3, 4])
    mono_lengths: List[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    top_n_per_length: int = 100_000
    strategy: Strategy = Strategy.MEAN
    quota: QuotaPolicy = field(default_factory=QuotaPolicy.default)
    seed: int = 42
    train: TrainConfig = field(default_factory=TrainConfig)
    precompute_batch: int = 64

    @property
    def inputs(self) -> Dict[str, Path]:
        out = {"mono_corpus": self.mono_corpus, "multi_corpus": self.multi_corpus,
               "teacher": self.teacher, "sts_pairs": self.sts_pairs}
        if self.distill_corpus is not None:
            out["distill_corpus"] = self.distill_corpus
        return out

    def validate(self) -> None:
        missing = [f"{k}={p}" for k, p in self.inputs.items() if not Path(p).is_file()]
        if missing:
            raise ValidationError("missing input file(s): " + ", ".join(missing))
        out = Path(self.output_dir)
        probe = out if out.exists() else out.parent
        if probe.exists() and not os.access(probe, os.W_OK):
            raise ValidationError(f"output directory {out} is not writable")

    @classmethod
    def from_toml(cls, path: str | os.PathLike, overrides: Optional[Dict[str, Dict]] = None) -> "PipelineConfig":
        path = Path(path)
        with open(path, "rb") as f:
            raw = tomllib.load(f)
        for section, values in (overrides or {}).items():
            raw.setdefault(section, {}).update(values)
        return cls.from_dict(raw, base=path.parent)

    @classmethod
    def from_dict(cls, raw: Dict, base: Path = Path(".")) -> "PipelineConfig":
        def p(value) -> Path:
            q = Path(value)
            return q if q.is_absolute() else base / q

        try:
            paths = raw["paths"]
            vocab = raw.get("vocab", {})
            quota = raw.get("quota", {})
            caps = {k: int(v) for k, v in quota.items() if k not in ("default", "seed")}
            cfg = cls(
                mono_corpus=p(paths["mono_corpus"]),
                multi_corpus=p(paths["multi_corpus"]),
                teacher=p(paths["teacher"]),
                sts_pairs=p(paths["sts_pairs"]),
                output_dir=p(paths["output_dir"]),
                distill_corpus=p(paths["distill_corpus"]) if "distill_corpus" in paths else None,
                target_size=int(vocab.get("target_size", 1024)),
                monolingual_top_k=int(vocab.get("monolingual_top_k", 256)),
                lengths=[int(x) for x in vocab.get("lengths", [1, 2, 3, 4])],
                mono_lengths=[int(x) for x in vocab.get("mono_lengths", [1, 2, 3, 4, 5, 6])],
                top_n_per_length=int(vocab.get("top_n_per_length", 100_000)),
                strategy=Strategy.parse(raw.get("clone", {}).get("strategy", "mean")),
                quota=QuotaPolicy(caps, int(quota.get("default", 10_000))),
                seed=int(raw.get("seed", quota.get("seed", 42))),
                train=TrainConfig.from_dict(raw.get("distill", {})),
                precompute_batch=int(raw.get("precompute", {}).get("batch", 64)),
            )
        except KeyError as exc:
            raise ValidationError(f"config is missing required key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad config value: {exc}") from None
        return cfg


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage(name: str):
    def wrap(fn):
        def run(*args, **kwargs):
            logger.info("stage %s: start", name)
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except (SurgeryError, OSError, ValueError) as exc:
                raise StageError(name, exc) from exc
        return run
    return wrap


def _records(path: Path) -> List[CorpusRecord]:
    stats = IngestStats()
    recs = list(ingest(path, stats=stats))
    if stats.skipped:
        logger.warning("%s: skipped %d malformed and %d invalid rows", path, stats.malformed, stats.invalid)
    return recs


def run_pipeline(config: PipelineConfig) -> Dict:
    """Run every stage in order and write ``manifest.json``; returns the manifest."""
    config.validate()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    produced: List[tuple] = []

    @_stage("build-vocab")
    def build_vocab():
        teacher = ModelBundle.load(config.teacher)
        if teacher.vocab is None:
            raise ValidationError("teacher bundle has no vocabulary")
        mono = count_substrings(_records(config.mono_corpus), config.mono_lengths, config.top_n_per_length)
        multi = count_substrings(_records(config.multi_corpus), config.lengths, config.top_n_per_length)
        plan = BuildPlan(config.monolingual_top_k, config.target_size, config.lengths, teacher.vocab, mono, multi)
        vocab = build(plan)
        path = out / "vocab.txt"
        vocab.save(path)
        return teacher, vocab, path

    @_stage("clone")
    def clone_stage(teacher, vocab):
        student, mapping = clone(teacher, vocab, config.strategy)
        logger.info("clone: %d fallback rows", mapping.fallback_count)
        path = out / "student_init.vsrg"
        student.save(path)
        return student, path

    @_stage("precompute")
    def precompute_stage(teacher):
        corpus = config.distill_corpus or config.multi_corpus
        capped = apply_quota(_records(corpus), config.quota, config.seed)
        stats = PrecomputeStats()
        enc = bundle_encoder(teacher, Segmenter(teacher.vocab))
        ds = TeacherDataset.from_records(precompute(capped, enc, config.precompute_batch, stats))
        if len(ds) == 0:
            raise SurgeryError("no teacher records survived precomputation")
        path = out / "dataset.vsds"
        ds.save(path)
        return ds, path

    @_stage("distill")
    def distill_stage(student, ds):
        model, _ = train(student, ds, config.train, out_dir=out / "distill")
        return model, out / "distill" / "model.vsrg"

    @_stage("eval-sts")
    def eval_stage(model, vocab):
        result = evaluate_sts(model, read_sts(config.sts_pairs), Segmenter(vocab))
        path = out / "report.json"
        path.write_text(result.to_json(), encoding="utf-8")
        return result, path

    teacher, vocab, p = build_vocab()
    produced.append(("build-vocab", p))
    student, p = clone_stage(teacher, vocab)
    produced.append(("clone", p))
    ds, p = precompute_stage(teacher)
    produced.append(("precompute", p))
    model, p = distill_stage(student, ds)
    produced.append(("distill", p))
    _, p = eval_stage(model, vocab)
    produced.append(("eval-sts", p))

    manifest = {
        "artifacts": [
            {"stage": stage, "path": path.relative_to(out).as_posix(), "sha256": sha256_file(path)}
            for stage, path in produced
        ]
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def verify_manifest(output_dir: str | os.PathLike) -> List[str]:
    """Paths whose on-disk hash no longer matches the manifest."""
    out = Path(output_dir)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    return [a["path"] for a in manifest["artifacts"] if sha256_file(out / a["path"]) != a["sha256"]]
