"""Model bundles: embedding table, toy backbone, bias-free projection head, vocabulary."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from . import tensorio
from .errors import FormatError, ValidationError
from .segmenter import DEFAULT_MAX_LEN
from .vocab import Vocabulary

EMBEDDING = "embedding"
BACKBONE_WEIGHT = "backbone.weight"
BACKBONE_BIAS = "backbone.bias"
DENSE1 = "head.dense1"
DENSE2 = "head.dense2"

# Full-scale model shapes, used for parameter accounting only.
FULL_SCALE_DIM = 768
FULL_SCALE_HIDDEN = 3072


@dataclass(frozen=True)
class ModelConfig:
    d: int
    h: int
    vocab_size: int
    max_len: int = DEFAULT_MAX_LEN


@dataclass
class ModelBundle:
    embedding: np.ndarray
    backbone_params: Dict[str, np.ndarray]
    head_params: Dict[str, np.ndarray]
    config: ModelConfig
    vocab: Optional[Vocabulary] = field(default=None, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        cfg = self.config
        expect = {EMBEDDING: (cfg.vocab_size, cfg.d), DENSE1: (cfg.h, cfg.d), DENSE2: (cfg.d, cfg.h)}
        if self.backbone_params:
            expect[BACKBONE_WEIGHT] = (cfg.d, cfg.d)
            expect[BACKBONE_BIAS] = (cfg.d,)
        tensors = self.tensors()
        for name, shape in expect.items():
            if name not in tensors:
                raise ValidationError(f"bundle is missing tensor {name!r}")
            if tuple(tensors[name].shape) != shape:
                raise ValidationError(f"tensor {name!r} has shape {tensors[name].shape}, expected {shape}")
        extra = set(self.head_params) - {DENSE1, DENSE2}
        if extra:
            raise ValidationError(f"projection head must be bias-free; unexpected tensors {sorted(extra)}")
        extra = set(self.backbone_params) - {BACKBONE_WEIGHT, BACKBONE_BIAS}
        if extra:
            raise ValidationError(f"unknown backbone tensors {sorted(extra)}")
        if self.vocab is not None and self.vocab.size != cfg.vocab_size:
            raise ValidationError(
                f"bundle vocabulary has {self.vocab.size} tokens but embedding has {cfg.vocab_size} rows"
            )

    def tensors(self) -> Dict[str, np.ndarray]:
        out = {EMBEDDING: self.embedding}
        out.update(self.backbone_params)
        out.update(self.head_params)
        return out

    def parameter_count(self) -> int:
        return sum(int(t.size) for t in self.tensors().values())

    def copy(self) -> "ModelBundle":
        return ModelBundle(
            self.embedding.copy(),
            {k: v.copy() for k, v in self.backbone_params.items()},
            {k: v.copy() for k, v in self.head_params.items()},
            self.config,
            self.vocab,
        )

    def to_file_tensors(self) -> Dict[str, np.ndarray]:
        out = dict(self.tensors())
        out["meta.config"] = tensorio.pack_json(asdict(self.config))
        if self.vocab is not None:
            out["meta.vocab"] = tensorio.pack_text(self.vocab.dumps())
        return out

    def save(self, path: str | os.PathLike) -> None:
        tensorio.save(path, self.to_file_tensors())

    @classmethod
    def from_file_tensors(cls, tensors: Dict[str, np.ndarray]) -> "ModelBundle":
        if "meta.config" not in tensors or EMBEDDING not in tensors:
            raise FormatError("tensor file is not a model bundle")
        config = ModelConfig(**tensorio.unpack_json(tensors["meta.config"]))
        vocab = Vocabulary.loads(tensorio.unpack_text(tensors["meta.vocab"])) if "meta.vocab" in tensors else None
        backbone = {k: v for k, v in tensors.items() if k.startswith("backbone.")}
        head = {k: v for k, v in tensors.items() if k.startswith("head.")}
        try:
            return cls(tensors[EMBEDDING], backbone, head, config, vocab)
        except ValidationError as exc:
            raise FormatError(f"shape mismatch in bundle: {exc}") from exc

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ModelBundle":
        return cls.from_file_tensors(tensorio.load(path))

    def with_embedding(self, embedding: np.ndarray, vocab: Optional[Vocabulary]) -> "ModelBundle":
        """Copy of this bundle with a new embedding table; every other tensor is copied unchanged."""
        clone = self.copy()
        clone.embedding = np.ascontiguousarray(embedding, dtype=np.float32)
        clone.vocab = vocab
        clone.config = replace(self.config, vocab_size=int(embedding.shape[0]))
        clone.validate()
        return clone


def random_bundle(
    vocab: Vocabulary | int,
    d: int,
    h: int,
    seed: int = 0,
    backbone: bool = True,
    max_len: int = DEFAULT_MAX_LEN,
    dtype=np.float32,
) -> ModelBundle:
    """A randomly initialised toy bundle, used as a stand-in teacher or test model."""
    rng = np.random.default_rng(seed)
    vocab_size = vocab if isinstance(vocab, int) else vocab.size
    emb = rng.normal(0.0, 1.0, size=(vocab_size, d)).astype(dtype)
    bb = {}
    if backbone:
        bb[BACKBONE_WEIGHT] = rng.normal(0.0, 0.3 / np.sqrt(d), size=(d, d)).astype(dtype)
        bb[BACKBONE_BIAS] = rng.normal(0.0, 0.1, size=(d,)).astype(dtype)
    head = {
        DENSE1: rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d)).astype(dtype),
        DENSE2: rng.normal(0.0, 1.0 / np.sqrt(h), size=(d, h)).astype(dtype),
    }
    return ModelBundle(emb, bb, head, ModelConfig(d, h, vocab_size, max_len),
                       None if isinstance(vocab, int) else vocab)


def identity_head(d: int, dtype=np.float32) -> Dict[str, np.ndarray]:
    """A head whose two projections compose to the identity (h = d)."""
    eye = np.eye(d, dtype=dtype)
    return {DENSE1: eye.copy(), DENSE2: eye.copy()}


def embedding_parameters(vocab_size: int, d: int = FULL_SCALE_DIM) -> int:
    return vocab_size * d
