"""Hybrid vocabulary construction.

Final layout: specials, byte tokens, the monolingual top-k, teacher tokens that
survive pruning, then a length-stratified multilingual fill up to the exact
target size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Collection, Dict, Iterable, List, Sequence

from .corpus import FrequencyTable
from .errors import ValidationError, VocabularyUnderfullError
from .vocab import RESERVED, Vocabulary, reserved_surfaces, surface_length

FULL_SCALE_TARGET_SIZE = 2**17
FULL_SCALE_MONOLINGUAL_TOP_K = 65_536


@dataclass
class BuildPlan:
    monolingual_top_k: int
    target_size: int
    lengths: List[int]
    teacher_vocab: Vocabulary
    mono_freq: FrequencyTable
    multi_freq: FrequencyTable = field(default_factory=FrequencyTable)

    def validate(self) -> None:
        if self.target_size < RESERVED:
            raise ValidationError(
                f"target size {self.target_size} is smaller than the {RESERVED} reserved tokens"
            )
        if self.monolingual_top_k + RESERVED > self.target_size:
            raise ValidationError(
                f"monolingual_top_k={self.monolingual_top_k} plus {RESERVED} reserved tokens "
                f"exceeds target size {self.target_size}"
            )
        if any(ell < 1 for ell in self.lengths):
            raise ValidationError("all multilingual lengths must be >= 1")


def select_top_k(freq: FrequencyTable, k: int) -> List[str]:
    if k < 0:
        raise ValueError("k must be >= 0")
    return [tok for tok, _ in freq.ranked()[:k]]


def greedy_cover(
    surface: str, tokens: Collection[str], max_len: int | None = None, lengths: Sequence[int] | None = None
) -> List[str] | None:
    """Greedy longest-match segmentation of ``surface`` over ``tokens`` only.

    Returns the pieces, or None when some position has no matching token.
    ``lengths`` (descending) restricts the probe lengths to those present in ``tokens``.
    """
    if lengths is None:
        if max_len is None:
            max_len = max((len(t) for t in tokens), default=0)
        lengths = range(max_len, 0, -1)
    pieces = []
    pos = 0
    n = len(surface)
    while pos < n:
        for ell in lengths:
            end = pos + ell
            if end <= n and surface[pos:end] in tokens:
                pieces.append(surface[pos:end])
                pos = end
                break
        else:
            return None
    return pieces


def prune_teacher(teacher_vocab: Vocabulary, retained: Sequence[str]) -> List[str]:
    """Teacher surfaces that cannot be resolved by the retained tokens, in teacher order."""
    retained_set = set(retained)
    if len(retained_set) != len(retained):
        raise ValidationError("retained tokens must be unique")
    if not retained_set:
        return list(teacher_vocab.regular_tokens)
    lengths = sorted({len(t) for t in retained_set}, reverse=True)
    survivors = []
    for tok in teacher_vocab.regular_tokens:
        if tok in retained_set:
            continue
        if greedy_cover(tok, retained_set, lengths=lengths) is not None:
            continue
        survivors.append(tok)
    return survivors


def _length_buckets(freq: FrequencyTable, lengths: Iterable[int]) -> Dict[int, List[str]]:
    buckets: Dict[int, List[str]] = {ell: [] for ell in lengths}
    for tok, _ in freq.ranked():
        bucket = buckets.get(surface_length(tok))
        if bucket is not None:
            bucket.append(tok)
    return buckets


def fill_multilingual(plan: BuildPlan, already_chosen: Collection[str]) -> List[str]:
    """Round-robin over length buckets until the vocabulary reaches the target size."""
    free = plan.target_size - RESERVED - len(already_chosen)
    if free < 0:
        raise ValidationError(
            f"{len(already_chosen)} chosen tokens already exceed the {plan.target_size - RESERVED} free slots"
        )
    if free == 0:
        return []
    buckets = _length_buckets(plan.multi_freq, plan.lengths)
    order = list(dict.fromkeys(plan.lengths))
    cursors = {ell: 0 for ell in order}
    taken = set(already_chosen) | set(reserved_surfaces())
    out: List[str] = []
    while len(out) < free:
        progressed = False
        for ell in order:
            if len(out) == free:
                break
            bucket = buckets[ell]
            i = cursors[ell]
            while i < len(bucket) and bucket[i] in taken:
                i += 1
            if i < len(bucket):
                taken.add(bucket[i])
                out.append(bucket[i])
                i += 1
                progressed = True
            cursors[ell] = i
        if not progressed:
            raise VocabularyUnderfullError(free - len(out))
    return out


def build(plan: BuildPlan) -> Vocabulary:
    plan.validate()
    reserved = set(reserved_surfaces())
    mono = [t for t in select_top_k(plan.mono_freq, plan.monolingual_top_k) if t not in reserved]
    survivors = [t for t in prune_teacher(plan.teacher_vocab, mono) if t not in reserved]
    capacity = plan.target_size - RESERVED - len(mono)
    if len(survivors) > capacity:
        rank = {t: i for i, t in enumerate(survivors)}
        keep = sorted(survivors, key=lambda t: (-plan.multi_freq.get(t, 0), rank[t]))[:capacity]
        keep_set = set(keep)
        survivors = [t for t in survivors if t in keep_set]
    chosen = mono + survivors
    fill = fill_multilingual(plan, chosen)
    vocab = Vocabulary.from_regular(chosen + fill)
    assert vocab.size == plan.target_size, (vocab.size, plan.target_size)
    return vocab
