"""Precomputed teacher-embedding datasets (``VSDS`` files), quotas, and batching.

File layout (little-endian)::

    b"VSDS" | version:u32 | d:u32 | d_pre:u32 | rows:u64 | n_langs:u32
    n_langs x 2-byte ASCII language codes
    rows x ( lang:u32 | text_offset:u64 | text_len:u64 | final:f32[d] | pre_dense:f32[d_pre] )
    text heap (UTF-8, concatenated)
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, NumericError, SurgeryError, ValidationError
from .model import FINAL, PRE_DENSE, pad_batch, project

logger = logging.getLogger(__name__)

MAGIC = b"VSDS"
VERSION = 1
NORM_TOL = 1e-4

FULL_SCALE_QUOTA = {"tr": 100_000, "en": 100_000}
FULL_SCALE_DEFAULT_CAP = 10_000


@dataclass
class TeacherRecord:
    text: str
    language: str
    teacher_embedding_final: np.ndarray
    teacher_embedding_pre_dense: Optional[np.ndarray] = None


@dataclass
class QuotaPolicy:
    caps: Dict[str, int] = field(default_factory=dict)
    default_cap: int = FULL_SCALE_DEFAULT_CAP

    def __post_init__(self):
        if self.default_cap < 0 or any(c < 0 for c in self.caps.values()):
            raise ValidationError("quota caps must be >= 0")

    def cap(self, language: str) -> int:
        return self.caps.get(language, self.default_cap)

    @classmethod
    def default(cls) -> "QuotaPolicy":
        return cls(dict(FULL_SCALE_QUOTA), FULL_SCALE_DEFAULT_CAP)

    @classmethod
    def parse(cls, spec: str) -> "QuotaPolicy":
        """Parse ``tr=100000,en=100000,default=10000``."""
        caps: Dict[str, int] = {}
        default = FULL_SCALE_DEFAULT_CAP
        for item in filter(None, (p.strip() for p in spec.split(","))):
            key, sep, value = item.partition("=")
            if not sep:
                raise ValidationError(f"bad quota item {item!r}")
            try:
                n = int(value)
            except ValueError:
                raise ValidationError(f"bad quota value in {item!r}") from None
            if key.strip() == "default":
                default = n
            else:
                caps[key.strip()] = n
        return cls(caps, default)

    def format(self) -> str:
        parts = [f"{k}={v}" for k, v in sorted(self.caps.items())]
        return ",".join(parts + [f"default={self.default_cap}"])


def apply_quota(records: Iterable, policy: QuotaPolicy, seed: int) -> list:
    """Cap each language after a seeded shuffle, then shuffle the union.

    Works on anything with a ``language`` attribute.
    """
    groups: Dict[str, list] = {}
    for rec in records:
        groups.setdefault(rec.language, []).append(rec)
    rng = np.random.default_rng(seed)
    kept: list = []
    for lang in sorted(groups):
        group = groups[lang]
        order = rng.permutation(len(group))[: policy.cap(lang)]
        kept.extend(group[i] for i in order)
    return [kept[i] for i in rng.permutation(len(kept))]


@dataclass
class PrecomputeStats:
    seen: int = 0
    kept: int = 0
    nonfinite: int = 0
    zero_norm: int = 0

    @property
    def skipped(self) -> int:
        return self.nonfinite + self.zero_norm


Encoder = Callable[[Sequence[str]], Tuple[np.ndarray, Optional[np.ndarray]]]


def bundle_encoder(bundle, segmenter, max_len: Optional[int] = None) -> Encoder:
    """Teacher encoder over a bundle: raw head outputs plus pooled pre-projection vectors."""
    params = bundle.tensors()
    max_len = max_len or bundle.config.max_len

    def encode(texts: Sequence[str]):
        seqs = [segmenter.encode(t, max_len).ids for t in texts]
        ids, mask = pad_batch(seqs, segmenter.vocab.pad_id)
        return project(params, ids, mask)

    return encode


def precompute(
    records: Iterable,
    teacher_encoder: Encoder,
    batch_size: int = 64,
    stats: Optional[PrecomputeStats] = None,
) -> Iterator[TeacherRecord]:
    stats = stats if stats is not None else PrecomputeStats()
    batch: list = []

    def flush():
        final, pre = teacher_encoder([r.text for r in batch])
        final = np.asarray(final, dtype=np.float64)
        for k, rec in enumerate(batch):
            stats.seen += 1
            v = final[k]
            if not np.all(np.isfinite(v)) or (pre is not None and not np.all(np.isfinite(pre[k]))):
                stats.nonfinite += 1
                continue
            norm = np.sqrt(v @ v)
            if norm < 1e-12:
                stats.zero_norm += 1
                continue
            stats.kept += 1
            yield TeacherRecord(
                rec.text,
                rec.language,
                (v / norm).astype(np.float32),
                None if pre is None else np.asarray(pre[k], dtype=np.float32),
            )

    for rec in records:
        batch.append(rec)
        if len(batch) == batch_size:
            yield from flush()
            batch = []
    if batch:
        yield from flush()


class TeacherDataset:
    """Columnar in-memory form of a teacher-embedding dataset."""

    def __init__(self, texts: List[str], languages: List[str], final: np.ndarray, pre_dense: Optional[np.ndarray] = None):
        final = np.asarray(final, dtype=np.float32)
        if final.ndim != 2 or final.shape[0] != len(texts) or len(languages) != len(texts):
            raise ValidationError("texts, languages and vectors must have matching row counts")
        if pre_dense is not None:
            pre_dense = np.asarray(pre_dense, dtype=np.float32)
            if pre_dense.ndim != 2 or pre_dense.shape[0] != len(texts):
                raise ValidationError("pre-dense matrix has the wrong number of rows")
        for lang in set(languages):
            if len(lang) != 2 or not lang.isascii():
                raise ValidationError(f"language code {lang!r} is not a 2-letter ISO code")
        self.texts = list(texts)
        self.languages = list(languages)
        self.final = final
        self.pre_dense = pre_dense

    @classmethod
    def from_records(cls, records: Iterable[TeacherRecord]) -> "TeacherDataset":
        records = list(records)
        if not records:
            return cls([], [], np.zeros((0, 0), np.float32))
        final = np.stack([r.teacher_embedding_final for r in records])
        has_pre = [r.teacher_embedding_pre_dense is not None for r in records]
        if any(has_pre) and not all(has_pre):
            raise ValidationError("either every record or no record carries a pre-dense vector")
        pre = np.stack([r.teacher_embedding_pre_dense for r in records]) if all(has_pre) else None
        return cls([r.text for r in records], [r.language for r in records], final, pre)

    def __len__(self) -> int:
        return len(self.texts)

    @property
    def d(self) -> int:
        return self.final.shape[1]

    @property
    def d_pre(self) -> int:
        return 0 if self.pre_dense is None else self.pre_dense.shape[1]

    def records(self) -> Iterator[TeacherRecord]:
        for i in range(len(self)):
            yield TeacherRecord(
                self.texts[i], self.languages[i], self.final[i],
                None if self.pre_dense is None else self.pre_dense[i],
            )

    def language_counts(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for lang in self.languages:
            out[lang] = out.get(lang, 0) + 1
        return out

    def validate(self, tol: float = NORM_TOL) -> None:
        """Raise on the first stored final vector that is not unit-norm."""
        norms = np.sqrt((self.final.astype(np.float64) ** 2).sum(axis=1))
        bad = ~(np.abs(norms - 1.0) <= tol)
        if bad.any():
            row = int(np.argmax(bad))
            raise NumericError(f"row {row}: final vector norm {norms[row]:.6g} outside 1 +/- {tol}")

    def _row_dtype(self) -> np.dtype:
        fields = [("lang", "<u4"), ("offset", "<u8"), ("length", "<u8"), ("final", "<f4", (self.d,))]
        if self.d_pre:
            fields.append(("pre", "<f4", (self.d_pre,)))
        return np.dtype(fields)

    def dumps(self) -> bytes:
        langs = sorted(set(self.languages))
        lang_idx = {l: i for i, l in enumerate(langs)}
        encoded = [t.encode("utf-8") for t in self.texts]
        rows = np.zeros(len(self), dtype=self._row_dtype())
        offset = 0
        for i, raw in enumerate(encoded):
            rows[i]["lang"] = lang_idx[self.languages[i]]
            rows[i]["offset"] = offset
            rows[i]["length"] = len(raw)
            offset += len(raw)
        if len(self):
            rows["final"] = self.final
            if self.d_pre:
                rows["pre"] = self.pre_dense
        header = MAGIC + struct.pack("<IIIQI", VERSION, self.d if len(self) else 0, self.d_pre, len(self), len(langs))
        return header + "".join(langs).encode("ascii") + rows.tobytes() + b"".join(encoded)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as f:
            f.write(self.dumps())

    @classmethod
    def loads(cls, data: bytes, validate: bool = True) -> "TeacherDataset":
        if data[:4] != MAGIC:
            raise FormatError("not a VSDS dataset (bad magic)")
        try:
            version, d, d_pre, n, n_langs = struct.unpack_from("<IIIQI", data, 4)
        except struct.error as exc:
            raise FormatError("truncated VSDS header") from exc
        if version != VERSION:
            raise FormatError(f"unsupported VSDS version {version}")
        pos = 4 + struct.calcsize("<IIIQI")
        langs_raw = data[pos:pos + 2 * n_langs]
        if len(langs_raw) != 2 * n_langs:
            raise FormatError("truncated language table")
        langs = [langs_raw[2 * i:2 * i + 2].decode("ascii") for i in range(n_langs)]
        pos += 2 * n_langs
        if n == 0:
            return cls([], [], np.zeros((0, d), np.float32), None)
        fields = [("lang", "<u4"), ("offset", "<u8"), ("length", "<u8"), ("final", "<f4", (d,))]
        if d_pre:
            fields.append(("pre", "<f4", (d_pre,)))
        dt = np.dtype(fields)
        end = pos + n * dt.itemsize
        if end > len(data):
            raise FormatError("truncated row block")
        rows = np.frombuffer(data, dtype=dt, count=n, offset=pos)
        heap = data[end:]
        texts = []
        for i in range(n):
            o, l = int(rows[i]["offset"]), int(rows[i]["length"])
            if o + l > len(heap):
                raise FormatError(f"row {i}: text runs past end of heap")
            texts.append(heap[o:o + l].decode("utf-8"))
        lang_ids = rows["lang"]
        if lang_ids.size and int(lang_ids.max()) >= n_langs:
            raise FormatError("row references an unknown language index")
        ds = cls(texts, [langs[i] for i in lang_ids], rows["final"].copy(),
                 rows["pre"].copy() if d_pre else None)
        if validate:
            ds.validate()
        return ds

    @classmethod
    def load(cls, path: str | os.PathLike, validate: bool = True) -> "TeacherDataset":
        with open(path, "rb") as f:
            return cls.loads(f.read(), validate)

    def export_tsv(self, path: str | os.PathLike) -> None:
        """Interchange export: language, text, then final and pre-dense vectors as space-separated reals."""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for i in range(len(self)):
                text = self.texts[i].replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")
                cols = [self.languages[i], text, " ".join(repr(float(x)) for x in self.final[i])]
                if self.d_pre:
                    cols.append(" ".join(repr(float(x)) for x in self.pre_dense[i]))
                f.write("\t".join(cols) + "\n")


@dataclass
class Batch:
    ids: np.ndarray
    mask: np.ndarray
    targets: np.ndarray
    rows: np.ndarray


class BatchServer:
    """Pre-segments a dataset once and serves seeded, padded batches per epoch."""

    def __init__(self, dataset: TeacherDataset, segmenter, batch_size: int, seed: int,
                 target: str = FINAL, max_len: Optional[int] = None):
        if batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if len(dataset) == 0:
            raise SurgeryError("dataset is empty")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.pad_id = segmenter.vocab.pad_id
        self.seqs = [segmenter.encode(t, max_len).ids for t in dataset.texts]
        for i, s in enumerate(self.seqs):
            if not s:
                raise ValidationError(f"dataset row {i} segments to zero tokens")
        if target == FINAL:
            targets = dataset.final.astype(np.float64)
        elif target == PRE_DENSE:
            if dataset.pre_dense is None:
                raise ValidationError("dataset has no pre-dense vectors")
            targets = dataset.pre_dense.astype(np.float64)
            norms = np.sqrt((targets ** 2).sum(axis=1, keepdims=True))
            if np.any(norms < 1e-12):
                raise NumericError("zero pre-dense target vector")
            targets = targets / norms
        else:
            raise ValidationError(f"unknown target {target!r}")
        self.targets = targets

    def __len__(self) -> int:
        return -(-len(self.dataset) // self.batch_size)

    def order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, epoch]).permutation(len(self.dataset))

    def epoch(self, epoch: int = 0, start_batch: int = 0) -> Iterator[Batch]:
        order = self.order(epoch)
        for b in range(start_batch, len(self)):
            rows = order[b * self.batch_size:(b + 1) * self.batch_size]
            ids, mask = pad_batch([self.seqs[r] for r in rows], self.pad_id)
            yield Batch(ids, mask, self.targets[rows], rows)


def batches(dataset: TeacherDataset, segmenter, batch_size: int, seed: int,
            target: str = FINAL, max_len: Optional[int] = None, epoch: int = 0) -> Iterator[Batch]:
    return BatchServer(dataset, segmenter, batch_size, seed, target, max_len).epoch(epoch)
