"""Weight-preserving cloning onto a new vocabulary.

Each target token is mapped to the teacher's segmentation of its surface form,
and its embedding row is composed from the corresponding teacher rows.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .bundle import ModelBundle
from .corpus import FrequencyTable
from .errors import NumericError, ValidationError
from .segmenter import Segmenter
from .vocab import BOUNDARY, Vocabulary

logger = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    MEAN = "mean"
    WEIGHTED = "weighted"
    FIRST = "first"
    LAST = "last"

    @classmethod
    def parse(cls, value: "str | Strategy") -> "Strategy":
        if isinstance(value, Strategy):
            return value
        try:
            return cls(value.lower())
        except ValueError:
            raise ValidationError(f"unknown composition strategy {value!r}") from None


@dataclass
class TokenMapping:
    """For each target id, the ordered teacher ids it is composed from.

    An empty entry marks a fallback row (no teacher coverage).
    """

    entries: List[Tuple[int, ...]]
    strategy: Strategy = Strategy.MEAN
    weights: Optional[List[np.ndarray]] = None
    teacher_size: Optional[int] = None

    def __post_init__(self):
        self.strategy = Strategy.parse(self.strategy)
        if self.strategy is Strategy.WEIGHTED:
            if self.weights is None:
                self.weights = [np.full(len(e), 1.0 / len(e)) if e else np.zeros(0) for e in self.entries]
            if len(self.weights) != len(self.entries):
                raise ValidationError("one weight vector per mapping entry is required")
            for j, (e, w) in enumerate(zip(self.entries, self.weights)):
                w = np.asarray(w, dtype=np.float64)
                if len(w) != len(e):
                    raise ValidationError(f"entry {j}: {len(e)} ids but {len(w)} weights")
                if len(w) and (np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9):
                    raise ValidationError(f"entry {j}: weights must be positive and sum to 1")
        if self.teacher_size is not None:
            for j, e in enumerate(self.entries):
                if any(i < 0 or i >= self.teacher_size for i in e):
                    raise ValidationError(f"entry {j} references a teacher id outside [0, {self.teacher_size})")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def fallback_ids(self) -> List[int]:
        return [j for j, e in enumerate(self.entries) if not e]

    @property
    def fallback_count(self) -> int:
        return sum(1 for e in self.entries if not e)


def _lexical(ids: Sequence[int], vocab: Vocabulary) -> bool:
    """True if the encoding contains at least one non-byte, non-UNK teacher token."""
    return any(not vocab.is_byte(i) and i != vocab.unk_id for i in ids)


def build_mapping(
    target_vocab: Vocabulary,
    teacher_segmenter: Segmenter,
    teacher_vocab: Optional[Vocabulary] = None,
    strategy: "Strategy | str" = Strategy.MEAN,
    teacher_freq: Optional[FrequencyTable] = None,
) -> TokenMapping:
    teacher_vocab = teacher_vocab or teacher_segmenter.vocab
    strategy = Strategy.parse(strategy)
    entries: List[Tuple[int, ...]] = []
    for j, surface in enumerate(target_vocab.tokens):
        if target_vocab.is_special(j):
            role = target_vocab.special_ids.index(j)
            entries.append((teacher_vocab.special_ids[role],))
            continue
        if target_vocab.is_byte(j):
            entries.append((teacher_vocab.byte_id(j - target_vocab.byte_token_base),))
            continue
        ids = teacher_segmenter.segment_surface(surface)
        # a marker the teacher cannot match lexically would only add byte noise
        marker_bytes = bool(ids) and teacher_vocab.is_byte(ids[0])
        if (marker_bytes or not _lexical(ids, teacher_vocab)) and surface.startswith(BOUNDARY) and len(surface) > 1:
            ids = teacher_segmenter.segment_surface(surface[len(BOUNDARY):])
        entries.append(tuple(ids) if _lexical(ids, teacher_vocab) else ())

    weights = None
    if strategy is Strategy.WEIGHTED:
        weights = []
        for e in entries:
            if not e:
                weights.append(np.zeros(0))
                continue
            if teacher_freq is None:
                w = np.ones(len(e))
            else:
                # add-one keeps every weight strictly positive
                w = np.array([teacher_freq.get(teacher_vocab.tokens[i], 0) + 1.0 for i in e])
            weights.append(w / w.sum())
    mapping = TokenMapping(entries, strategy, weights, teacher_vocab.size)
    if mapping.fallback_count:
        logger.info("%d target tokens have no teacher coverage; using the table mean", mapping.fallback_count)
    return mapping


def compose(teacher_E: np.ndarray, mapping: TokenMapping) -> np.ndarray:
    """Compose the new embedding table (64-bit arithmetic, 32-bit result)."""
    E = np.asarray(teacher_E)
    if E.ndim != 2:
        raise ValidationError("teacher embedding must be a 2-D matrix")
    V, d = E.shape
    E64 = E.astype(np.float64)
    out = np.empty((len(mapping), d), dtype=np.float64)
    fallback_row = None
    strategy = mapping.strategy
    for j, ids in enumerate(mapping.entries):
        if any(i < 0 or i >= V for i in ids):
            raise ValidationError(f"mapping entry {j} references a row outside the teacher table ({V} rows)")
        if not ids:
            if fallback_row is None:
                fallback_row = E64.mean(axis=0)
            out[j] = fallback_row
        elif len(ids) == 1 or strategy is Strategy.FIRST:
            out[j] = E64[ids[0]]
        elif strategy is Strategy.LAST:
            out[j] = E64[ids[-1]]
        elif strategy is Strategy.MEAN:
            out[j] = E64[list(ids)].sum(axis=0) / len(ids)
        else:
            out[j] = np.asarray(mapping.weights[j], dtype=np.float64) @ E64[list(ids)]
        if not np.all(np.isfinite(out[j])):
            raise NumericError(f"non-finite composed embedding at row {j}")
    result = out.astype(np.float32)
    bad = ~np.all(np.isfinite(result), axis=1)
    if bad.any():
        raise NumericError(f"composed embedding overflows float32 at row {int(np.argmax(bad))}")
    return result


def clone(
    teacher: ModelBundle,
    target_vocab: Vocabulary,
    strategy: "Strategy | str" = Strategy.MEAN,
    teacher_freq: Optional[FrequencyTable] = None,
) -> Tuple[ModelBundle, TokenMapping]:
    """Clone ``teacher`` onto ``target_vocab``; all non-embedding tensors are copied bit-exactly."""
    if teacher.vocab is None:
        raise ValidationError("teacher bundle carries no vocabulary; cannot map surfaces")
    teacher.validate()
    seg = Segmenter(teacher.vocab)
    mapping = build_mapping(target_vocab, seg, teacher.vocab, strategy, teacher_freq)
    new_E = compose(teacher.embedding, mapping)
    return teacher.with_embedding(new_E, target_vocab), mapping


@dataclass(frozen=True)
class EmbeddingFootprint:
    teacher_params: int
    student_params: int

    @property
    def saved(self) -> int:
        return self.teacher_params - self.student_params

    @property
    def reduction(self) -> float:
        return 1.0 - self.student_params / self.teacher_params


def embedding_footprint(teacher_vocab_size: int, student_vocab_size: int, d: int) -> EmbeddingFootprint:
    return EmbeddingFootprint(teacher_vocab_size * d, student_vocab_size * d)
