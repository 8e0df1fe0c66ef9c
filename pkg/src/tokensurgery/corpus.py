"""Corpus ingestion and frequency tables."""

from __future__ import annotations

import json
import logging
import os
import re
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import islice
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from .errors import CounterOverflowError, FormatError, ValidationError
from .vocab import BOUNDARY, escape_surface, surface_length, unescape_surface

logger = logging.getLogger(__name__)

U64_MAX = 2**64 - 1
_LANG_RE = re.compile(r"^[a-z]{2}$")


@dataclass(frozen=True)
class CorpusRecord:
    text: str
    language: str

    def is_valid(self) -> bool:
        return bool(self.text.strip()) and bool(_LANG_RE.match(self.language))


@dataclass
class IngestStats:
    read: int = 0
    malformed: int = 0
    invalid: int = 0

    @property
    def skipped(self) -> int:
        return self.malformed + self.invalid


def detect_format(path: str | os.PathLike) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".jsonl", ".json", ".ndjson"):
        return "jsonl"
    if ext in (".tsv", ".tab"):
        return "tsv"
    raise ValidationError(f"cannot infer corpus format from extension {ext!r} ({path})")


def ingest(
    path: str | os.PathLike,
    language_field: Optional[str] = None,
    stats: Optional[IngestStats] = None,
    text_field: str = "text",
) -> Iterator[CorpusRecord]:
    """Yield valid records from a JSONL or TSV corpus in file order.

    JSONL rows carry ``text`` and a language field (``language`` unless
    ``language_field`` names another key). TSV rows are ``language<TAB>text``.
    Bad lines are skipped and tallied in ``stats``.
    """
    fmt = detect_format(path)
    stats = stats if stats is not None else IngestStats()
    lang_key = language_field or "language"
    with open(path, "r", encoding="utf-8", newline="\n") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            stats.read += 1
            if fmt == "jsonl":
                try:
                    row = json.loads(line)
                    text, lang = row[text_field], row[lang_key]
                except (json.JSONDecodeError, KeyError, TypeError):
                    stats.malformed += 1
                    logger.warning("%s:%d: malformed JSONL row skipped", path, lineno)
                    continue
                if not isinstance(text, str) or not isinstance(lang, str):
                    stats.malformed += 1
                    continue
            else:
                parts = line.split("\t")
                if len(parts) != 2:
                    stats.malformed += 1
                    logger.warning("%s:%d: expected 2 TSV columns, got %d", path, lineno, len(parts))
                    continue
                lang, text = parts
            rec = CorpusRecord(text, lang)
            if not rec.is_valid():
                stats.invalid += 1
                continue
            yield rec


class FrequencyTable:
    """Immutable surface -> count map with a cached total."""

    __slots__ = ("_counts", "_total")

    def __init__(self, counts: Mapping[str, int] | None = None):
        clean: Dict[str, int] = {}
        for tok, c in (counts or {}).items():
            if not tok:
                raise ValidationError("frequency tables cannot hold the empty surface")
            if c < 1:
                raise ValidationError(f"count for {tok!r} must be >= 1, got {c}")
            if c > U64_MAX:
                raise CounterOverflowError(f"count for {tok!r} exceeds 64 bits")
            clean[tok] = int(c)
        total = sum(clean.values())
        if total > U64_MAX:
            raise CounterOverflowError("total count exceeds 64 bits")
        self._counts = clean
        self._total = total

    @property
    def total_count(self) -> int:
        return self._total

    @property
    def entries(self) -> Mapping[str, int]:
        return dict(self._counts)

    def __len__(self) -> int:
        return len(self._counts)

    def __contains__(self, tok: str) -> bool:
        return tok in self._counts

    def __getitem__(self, tok: str) -> int:
        return self._counts[tok]

    def get(self, tok: str, default: int = 0) -> int:
        return self._counts.get(tok, default)

    def __eq__(self, other) -> bool:
        return isinstance(other, FrequencyTable) and self._counts == other._counts

    def __repr__(self) -> str:
        return f"FrequencyTable({len(self)} entries, total={self._total})"

    def ranked(self) -> List[Tuple[str, int]]:
        """Entries sorted by count descending, then surface ascending."""
        return sorted(self._counts.items(), key=lambda kv: (-kv[1], kv[0]))

    def merge(self, other: "FrequencyTable") -> "FrequencyTable":
        merged = Counter(self._counts)
        merged.update(other._counts)
        return FrequencyTable(merged)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"#total\t{self._total}\n")
            for tok, c in self.ranked():
                f.write(f"{escape_surface(tok)}\t{c}\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "FrequencyTable":
        counts: Dict[str, int] = {}
        with open(path, "r", encoding="utf-8", newline="\n") as f:
            header = f.readline().rstrip("\n")
            tag, _, total = header.partition("\t")
            if tag != "#total":
                raise FormatError(f"{path}: missing '#total' header")
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, sep, c = line.rpartition("\t")
                if not sep:
                    raise FormatError(f"{path}: malformed line {line!r}")
                counts[unescape_surface(tok)] = int(c)
        table = cls(counts)
        if table.total_count != int(total):
            raise FormatError(f"{path}: header total {total} != sum of counts {table.total_count}")
        return table


def count_tokens(records: Iterable, segmenter) -> FrequencyTable:
    """Count every token surface the segmenter emits over the record stream."""
    if segmenter.vocab.size == 0:
        raise ValidationError("segmenter vocabulary is empty")
    ids: Counter = Counter()
    for rec in records:
        ids.update(segmenter.encode(rec.text, max_len=None).ids)
    tokens = segmenter.vocab.tokens
    return FrequencyTable({tokens[i]: c for i, c in ids.items()})


def substring_counts(records: Iterable, lengths: Iterable[int]) -> Counter:
    """Raw character n-gram counts per word, word-initial grams also counted with the marker."""
    lengths = sorted(set(lengths))
    if not lengths or lengths[0] < 1:
        raise ValidationError("lengths must be a non-empty set of positive integers")
    counts: Counter = Counter()
    for rec in records:
        text = rec.text if hasattr(rec, "text") else rec
        for word in text.split():
            n = len(word)
            for ell in lengths:
                for i in range(n - ell + 1):
                    gram = word[i:i + ell]
                    if BOUNDARY in gram:
                        continue
                    counts[gram] += 1
                    if i == 0:
                        counts[BOUNDARY + gram] += 1
    return counts


def top_per_length(counts: Mapping[str, int], lengths: Iterable[int], top_n: int) -> FrequencyTable:
    buckets: Dict[int, List[Tuple[str, int]]] = {ell: [] for ell in set(lengths)}
    for tok, c in counts.items():
        bucket = buckets.get(surface_length(tok))
        if bucket is not None:
            bucket.append((tok, c))
    kept: Dict[str, int] = {}
    for bucket in buckets.values():
        bucket.sort(key=lambda kv: (-kv[1], kv[0]))
        kept.update(bucket[:top_n])
    return FrequencyTable(kept)


def count_substrings(records: Iterable, lengths: Iterable[int], top_n_per_length: int) -> FrequencyTable:
    lengths = set(lengths)
    return top_per_length(substring_counts(records, lengths), lengths, top_n_per_length)


def _chunks(it: Iterable, size: int) -> Iterator[List]:
    it = iter(it)
    while True:
        chunk = list(islice(it, size))
        if not chunk:
            return
        yield chunk


def _count_chunk(args: Tuple[List[str], Sequence[int]]) -> Counter:
    texts, lengths = args
    return substring_counts(texts, lengths)


def count_substrings_sharded(
    records: Iterable, lengths: Iterable[int], top_n_per_length: int, workers: int, chunk_size: int = 5000
) -> FrequencyTable:
    """Same result as :func:`count_substrings`, counted across worker processes."""
    lengths = sorted(set(lengths))
    if workers <= 1:
        return count_substrings(records, lengths, top_n_per_length)
    total: Counter = Counter()
    jobs = ((([r.text for r in chunk]), lengths) for chunk in _chunks(records, chunk_size))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for partial in pool.map(_count_chunk, jobs):
            total.update(partial)
    return top_per_length(total, lengths, top_n_per_length)
