"""Vocabulary surgery and offline cosine distillation for sentence-embedding models."""

from .builder import BuildPlan, build, fill_multilingual, prune_teacher, select_top_k
from .bundle import ModelBundle, ModelConfig, random_bundle
from .cloner import Strategy, TokenMapping, build_mapping, clone, compose
from .corpus import CorpusRecord, FrequencyTable, count_substrings, count_tokens, ingest
from .distill import AdamW, TrainConfig, lr_at, train
from .evaluate import StsPair, aggregate_report, evaluate_sts, pearson, spearman
from .model import backward, cosine_loss, forward
from .segmenter import Segmenter, decode, encode, fragmentation
from .store import QuotaPolicy, TeacherDataset, TeacherRecord, apply_quota, batches, precompute
from .vocab import Vocabulary

__version__ = "0.1.0"

__all__ = [
    "AdamW", "BuildPlan", "CorpusRecord", "FrequencyTable", "ModelBundle", "ModelConfig",
    "QuotaPolicy", "Segmenter", "Strategy", "StsPair", "TeacherDataset", "TeacherRecord",
    "TokenMapping", "TrainConfig", "Vocabulary", "aggregate_report", "apply_quota", "backward",
    "batches", "build", "build_mapping", "clone", "compose", "cosine_loss", "count_substrings",
    "count_tokens", "decode", "encode", "evaluate_sts", "fill_multilingual", "forward",
    "fragmentation", "ingest", "lr_at", "pearson", "precompute", "prune_teacher",
    "random_bundle", "select_top_k", "spearman", "train",
]
