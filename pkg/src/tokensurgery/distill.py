"""Offline cosine distillation: schedule, optimizer, clipping, checkpoints, training loop."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import tensorio
from .bundle import BACKBONE_BIAS, BACKBONE_WEIGHT, DENSE1, DENSE2, EMBEDDING, ModelBundle
from .errors import FormatError, TrainingAborted, ValidationError
from .model import FINAL, PRE_DENSE, backward, cosine_loss, forward
from .segmenter import Segmenter
from .store import BatchServer, TeacherDataset

logger = logging.getLogger(__name__)

GROUPS = {
    "embedding": (EMBEDDING,),
    "backbone": (BACKBONE_WEIGHT, BACKBONE_BIAS),
    "head": (DENSE1, DENSE2),
}


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 256
    lr_peak: float = 5e-5
    warmup_ratio: float = 0.01
    weight_decay: float = 0.01
    max_grad_norm: float = 1.0
    checkpoint_every: int = 100
    seed: int = 42
    target: str = FINAL
    loss: str = "cosine"
    train_embedding: bool = True
    train_backbone: bool = False
    train_head: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValidationError("warmup_ratio must be in [0, 1)")
        if self.lr_peak <= 0:
            raise ValidationError("lr_peak must be > 0")
        if self.epochs < 1 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ValidationError("epochs, batch_size and checkpoint_every must be >= 1")
        if self.target not in (FINAL, PRE_DENSE):
            raise ValidationError(f"target must be {FINAL!r} or {PRE_DENSE!r}")
        if self.loss != "cosine":
            raise ValidationError("only the cosine loss is supported")

    def trainable(self) -> List[str]:
        names = []
        for group, flag in (("embedding", self.train_embedding), ("backbone", self.train_backbone),
                            ("head", self.train_head)):
            if flag:
                names.extend(GROUPS[group])
        return names

    @classmethod
    def from_dict(cls, d: Dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown training options {sorted(unknown)}")
        return cls(**d)


def warmup_steps(total_steps: int, warmup_ratio: float) -> int:
    return max(1, int(math.floor(warmup_ratio * total_steps + 0.5)))


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warmup to the peak, then cosine decay to zero at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    w = warmup_steps(total_steps, config.warmup_ratio)
    if step < w:
        return config.lr_peak * (step + 1) / w
    if total_steps == w:
        return config.lr_peak
    progress = (step - w) / (total_steps - w)
    return config.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; return the original norm."""
    total = math.sqrt(math.fsum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class AdamW:
    """Adaptive moments with decoupled weight decay; moments kept in float64."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros(p.shape)
                self.v[name] = np.zeros(p.shape)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p64 = p.astype(np.float64)
            p64 *= 1.0 - lr * self.weight_decay
            p64 -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p[...] = p64


@dataclass
class TrainState:
    step: int
    optimizer: AdamW
    loss_sum: float = 0.0
    loss_count: int = 0

    @property
    def running_loss(self) -> float:
        return self.loss_sum / self.loss_count if self.loss_count else float("nan")


def checkpoint_name(step: int) -> str:
    return f"ckpt-{step:06d}.vsrg"


def save_checkpoint(path: str | os.PathLike, bundle: ModelBundle, state: TrainState,
                    config: TrainConfig, total_steps: int) -> None:
    tensors = bundle.to_file_tensors()
    for name in sorted(state.optimizer.m):
        tensors[f"state.m.{name}"] = state.optimizer.m[name]
        tensors[f"state.v.{name}"] = state.optimizer.v[name]
    tensors["meta.state"] = tensorio.pack_json({
        "step": state.step,
        "adam_t": state.optimizer.t,
        "loss_sum": state.loss_sum,
        "loss_count": state.loss_count,
        "total_steps": total_steps,
        "rng": {"seed": config.seed, "epoch": state.step // max(1, total_steps // config.epochs)},
        "config": asdict(config),
    })
    tmp = Path(str(path) + ".tmp")
    tensorio.save(tmp, tensors)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> Tuple[ModelBundle, TrainState, Dict]:
    tensors = tensorio.load(path)
    if "meta.state" not in tensors:
        raise FormatError(f"{path} is a model bundle, not a training checkpoint")
    meta = tensorio.unpack_json(tensors["meta.state"])
    opt_cfg = meta["config"]
    opt = AdamW(opt_cfg["beta1"], opt_cfg["beta2"], opt_cfg["eps"], opt_cfg["weight_decay"], meta["adam_t"])
    for key, arr in tensors.items():
        if key.startswith("state.m."):
            opt.m[key[len("state.m."):]] = arr
        elif key.startswith("state.v."):
            opt.v[key[len("state.v."):]] = arr
    model_tensors = {k: v for k, v in tensors.items() if not k.startswith("state.") and k != "meta.state"}
    bundle = ModelBundle.from_file_tensors(model_tensors)
    state = TrainState(meta["step"], opt, meta["loss_sum"], meta["loss_count"])
    return bundle, state, meta


@dataclass
class MetricRow:
    step: int
    lr: float
    loss: float


def train(
    bundle: ModelBundle,
    dataset: TeacherDataset,
    config: TrainConfig,
    out_dir: Optional[str | os.PathLike] = None,
    resume_from: Optional[str | os.PathLike] = None,
    segmenter: Optional[Segmenter] = None,
    max_len: Optional[int] = None,
) -> Tuple[ModelBundle, List[MetricRow]]:
    """Distil ``bundle`` towards the dataset's stored teacher vectors.

    Returns the trained bundle and the metric rows produced by this call.
    With ``out_dir`` set, checkpoints and ``metrics.tsv`` are written there.
    """
    if len(dataset) == 0:
        raise ValidationError("dataset is empty")
    if resume_from is not None:
        bundle, state, meta = load_checkpoint(resume_from)
        saved = TrainConfig.from_dict(meta["config"])
        if saved != config:
            raise ValidationError("checkpoint was written with a different training config")
    else:
        bundle = bundle.copy()
        state = TrainState(0, AdamW(config.beta1, config.beta2, config.eps, config.weight_decay))
    if segmenter is None:
        if bundle.vocab is None:
            raise ValidationError("bundle has no vocabulary and no segmenter was given")
        segmenter = Segmenter(bundle.vocab)
    if dataset.d != bundle.config.d and config.target == FINAL:
        raise ValidationError(f"dataset vectors have d={dataset.d}, model has d={bundle.config.d}")

    server = BatchServer(dataset, segmenter, config.batch_size, config.seed, config.target,
                         max_len or bundle.config.max_len)
    steps_per_epoch = len(server)
    total = steps_per_epoch * config.epochs
    params = bundle.tensors()
    trainable = [n for n in config.trainable() if n in params]

    out = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "metrics.tsv"
        if state.step == 0 or not log_path.exists():
            log_file = open(log_path, "w", encoding="utf-8", newline="\n")
            log_file.write("step\tlr\tloss\n")
        else:
            log_file = open(log_path, "a", encoding="utf-8", newline="\n")
    last_ckpt: Optional[Path] = Path(resume_from) if resume_from is not None else None

    def checkpoint():
        nonlocal last_ckpt
        if out is None:
            return
        path = out / checkpoint_name(state.step)
        save_checkpoint(path, bundle, state, config, total)
        last_ckpt = path
        logger.info("step %d/%d: running loss %.6f, checkpoint %s", state.step, total, state.running_loss, path.name)

    rows: List[MetricRow] = []
    try:
        while state.step < total:
            epoch, first = divmod(state.step, steps_per_epoch)
            if first == 0:
                state.loss_sum, state.loss_count = 0.0, 0
            for batch in server.epoch(epoch, first):
                step = state.step
                lr = lr_at(step, total, config)
                s_hat, cache = forward(params, batch.ids, batch.mask, config.target)
                loss, g = cosine_loss(s_hat, batch.targets)
                if not math.isfinite(loss):
                    raise TrainingAborted(f"non-finite loss at step {step}", last_ckpt)
                grads = backward(params, cache, g)
                grads = {n: grads[n] for n in trainable}
                clip_grad_norm(grads, config.max_grad_norm)
                state.optimizer.step(params, grads, lr)

                state.step += 1
                state.loss_sum += loss
                state.loss_count += 1
                rows.append(MetricRow(step, lr, loss))
                if log_file is not None:
                    log_file.write(f"{step}\t{lr!r}\t{loss!r}\n")
                    log_file.flush()
                if state.step % config.checkpoint_every == 0 or state.step == total:
                    checkpoint()
    finally:
        if log_file is not None:
            log_file.close()
    if out is not None:
        bundle.save(out / "model.vsrg")
    return bundle, rows
