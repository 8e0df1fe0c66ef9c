"""STS correlation evaluation and category-level report aggregation."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import FormatError, SurgeryError, ValidationError
from .model import FINAL, embed_texts


@dataclass(frozen=True)
class StsPair:
    sentence1: str
    sentence2: str
    gold: float

    def __post_init__(self):
        if not (0.0 <= self.gold <= 5.0):
            raise ValidationError(f"gold score {self.gold} outside [0, 5]")
        if not self.sentence1.strip() or not self.sentence2.strip():
            raise ValidationError("STS sentences must be non-empty")


def read_sts(path: str | os.PathLike) -> List[StsPair]:
    """Read ``score<TAB>sentence1<TAB>sentence2`` lines (no header)."""
    pairs = []
    with open(path, "r", encoding="utf-8", newline="\n") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated columns")
            try:
                gold = float(parts[0])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad score {parts[0]!r}") from None
            pairs.append(StsPair(parts[1], parts[2], gold))
    return pairs


def _check_pair(x, y) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValidationError("x and y must be 1-D sequences of equal length")
    if len(x) < 2:
        raise ValidationError("at least two observations are required")
    return x, y


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = _check_pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise SurgeryError("zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    n = len(x)
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = _check_pair(x, y)
    return pearson(average_ranks(x), average_ranks(y))


@dataclass
class StsResult:
    pearson: float
    spearman: float
    n_pairs: int
    n_skipped: int

    def to_json(self) -> str:
        return json.dumps(
            {"pearson": self.pearson, "spearman": self.spearman,
             "n_pairs": self.n_pairs, "n_skipped": self.n_skipped},
            sort_keys=True, indent=2,
        ) + "\n"


def cosine_scores(bundle, segmenter, pairs: Sequence[StsPair]) -> Tuple[np.ndarray, np.ndarray]:
    """Predicted cosine per pair and a boolean mask of pairs that could be scored."""
    a, err_a = embed_texts(bundle, segmenter, [p.sentence1 for p in pairs], FINAL)
    b, err_b = embed_texts(bundle, segmenter, [p.sentence2 for p in pairs], FINAL)
    ok = np.array([ea is None and eb is None for ea, eb in zip(err_a, err_b)], dtype=bool)
    scores = np.where(ok, (np.nan_to_num(a) * np.nan_to_num(b)).sum(axis=1), np.nan)
    return scores, ok


def evaluate_sts(bundle, pairs: Sequence[StsPair], segmenter) -> StsResult:
    """Correlate embedding cosines with gold scores; results in percent, 2 decimals."""
    if not pairs:
        raise ValidationError("no STS pairs to evaluate")
    scores, ok = cosine_scores(bundle, segmenter, pairs)
    gold = np.array([p.gold for p in pairs])
    n_ok = int(ok.sum())
    if n_ok < 2:
        raise SurgeryError(f"only {n_ok} scoreable pair(s); need at least 2")
    return StsResult(
        round(100.0 * pearson(scores[ok], gold[ok]), 2),
        round(100.0 * spearman(scores[ok], gold[ok]), 2),
        n_ok,
        len(pairs) - n_ok,
    )


@dataclass
class CategoryReport:
    category_means: Dict[str, float]
    macro_average: float
    task_scores: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "macro_average": self.macro_average,
            "categories": dict(sorted(self.category_means.items())),
            "tasks": dict(sorted(self.task_scores.items())),
        }


def aggregate_report(task_scores: Mapping[str, Tuple[str, float]]) -> CategoryReport:
    """Category mean of task scores, then the plain mean of category means."""
    if not task_scores:
        raise ValidationError("no task scores to aggregate")
    by_cat: Dict[str, List[float]] = {}
    for task, (category, score) in task_scores.items():
        if not category:
            raise ValidationError(f"task {task!r} has no category")
        by_cat.setdefault(category, []).append(float(score))
    means = {c: math.fsum(v) / len(v) for c, v in by_cat.items()}
    macro = math.fsum(means.values()) / len(means)
    return CategoryReport(means, macro, {t: float(s) for t, (_, s) in task_scores.items()})


def load_task_scores(path: str | os.PathLike) -> Dict[str, Tuple[str, float]]:
    """Read ``{"task": {"category": ..., "score": ...}, ...}`` JSON."""
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    try:
        return {task: (entry["category"], float(entry["score"])) for task, entry in raw.items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed task score entry ({exc})") from exc
