"""Student encoder forward and backward passes.

    x_t = E[id_t]
    h_t = x_t + W_b x_t + b_b            (toy residual backbone, optional)
    p   = sum_t m_t h_t / sum_t m_t      (masked mean pooling)
    z   = W2 (W1 p)                      (bias-free projections)
    s   = z / |z|

All arithmetic runs in float64 regardless of the parameter dtype.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bundle import BACKBONE_BIAS, BACKBONE_WEIGHT, DENSE1, DENSE2, EMBEDDING, ModelBundle
from .errors import DegenerateEmbeddingError, ValidationError

DEGENERATE_NORM = 1e-12

FINAL = "final"
PRE_DENSE = "pre_dense"


@dataclass
class ForwardCache:
    ids: np.ndarray
    mask: np.ndarray
    x: np.ndarray
    counts: np.ndarray
    pooled: np.ndarray
    hidden: Optional[np.ndarray]
    z: np.ndarray
    norm: np.ndarray
    out: np.ndarray
    output: str


def _as64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def _trunk(params: Dict[str, np.ndarray], ids, mask):
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if ids.ndim != 2 or ids.shape != mask.shape:
        raise ValidationError("ids and mask must be matching 2-D arrays")
    E = params[EMBEDDING]
    if ids.size and (ids.min() < 0 or ids.max() >= E.shape[0]):
        raise ValidationError("token id outside the embedding table")
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise ValidationError(f"row {int(np.argmin(counts))} has no unmasked tokens")

    x = _as64(E)[ids]
    m = mask[..., None].astype(np.float64)
    if BACKBONE_WEIGHT in params:
        hidden = x + x @ _as64(params[BACKBONE_WEIGHT]).T + _as64(params[BACKBONE_BIAS])
    else:
        hidden = x
    pooled = (hidden * m).sum(axis=1) / counts[:, None]
    return ids, mask, x, counts, pooled


def project(params: Dict[str, np.ndarray], ids, mask) -> Tuple[np.ndarray, np.ndarray]:
    """Unnormalised head output and the pooled vector it was projected from."""
    _, _, _, _, pooled = _trunk(params, ids, mask)
    z = (pooled @ _as64(params[DENSE1]).T) @ _as64(params[DENSE2]).T
    return z, pooled


def forward(params: Dict[str, np.ndarray], ids, mask, output: str = FINAL) -> Tuple[np.ndarray, ForwardCache]:
    """Unit-norm sentence vectors for a padded batch.

    ``output="pre_dense"`` returns the normalised pooled vector instead of the
    projected one.
    """
    ids, mask, x, counts, pooled = _trunk(params, ids, mask)
    if output == PRE_DENSE:
        z = pooled
        hidden_proj = None
    elif output == FINAL:
        hidden_proj = pooled @ _as64(params[DENSE1]).T
        z = hidden_proj @ _as64(params[DENSE2]).T
    else:
        raise ValidationError(f"unknown output {output!r}")
    norm = np.sqrt((z * z).sum(axis=1))
    if np.any(norm < DEGENERATE_NORM):
        raise DegenerateEmbeddingError(f"degenerate embedding in row {int(np.argmin(norm))}")
    out = z / norm[:, None]
    cache = ForwardCache(ids, mask, x, counts, pooled, hidden_proj, z, norm, out, output)
    return out, cache


def backward(params: Dict[str, np.ndarray], cache: ForwardCache, grad_out) -> Dict[str, np.ndarray]:
    """Exact gradients of a scalar loss given its gradient w.r.t. the unit outputs."""
    g = _as64(grad_out)
    s = cache.out
    dz = (g - s * (s * g).sum(axis=1, keepdims=True)) / cache.norm[:, None]

    grads: Dict[str, np.ndarray] = {}
    if cache.output == FINAL:
        W1 = _as64(params[DENSE1])
        W2 = _as64(params[DENSE2])
        grads[DENSE2] = dz.T @ cache.hidden
        du = dz @ W2
        grads[DENSE1] = du.T @ cache.pooled
        dp = du @ W1
    else:
        grads[DENSE1] = np.zeros(params[DENSE1].shape)
        grads[DENSE2] = np.zeros(params[DENSE2].shape)
        dp = dz

    m = cache.mask[..., None].astype(np.float64)
    dhidden = m * (dp / cache.counts[:, None])[:, None, :]
    if BACKBONE_WEIGHT in params:
        Wb = _as64(params[BACKBONE_WEIGHT])
        d = Wb.shape[0]
        grads[BACKBONE_WEIGHT] = dhidden.reshape(-1, d).T @ cache.x.reshape(-1, d)
        grads[BACKBONE_BIAS] = dhidden.sum(axis=(0, 1))
        dx = dhidden + dhidden @ Wb
    else:
        dx = dhidden

    E = params[EMBEDDING]
    dE = np.zeros(E.shape, dtype=np.float64)
    np.add.at(dE, cache.ids.reshape(-1), dx.reshape(-1, E.shape[1]))
    grads[EMBEDDING] = dE
    return grads


def cosine_loss(s_hat, t_hat, tol: float = 1e-4) -> Tuple[float, np.ndarray]:
    """Mean of (1 - s.t) over the batch, with its gradient w.r.t. ``s_hat``."""
    s = _as64(s_hat)
    t = _as64(t_hat)
    if s.shape != t.shape or s.ndim != 2:
        raise ValidationError("s_hat and t_hat must be matching (N, d) arrays")
    for name, arr in (("student", s), ("target", t)):
        norms = np.sqrt((arr * arr).sum(axis=1))
        bad = np.abs(norms - 1.0) > tol
        if bad.any():
            raise ValidationError(f"{name} row {int(np.argmax(bad))} is not unit-norm (|v| = {norms[bad][0]:.6g})")
    n = s.shape[0]
    cos = (s * t).sum(axis=1)
    loss = float((1.0 - cos).sum() / n)
    return loss, -t / n


def bundle_params(bundle: ModelBundle) -> Dict[str, np.ndarray]:
    return bundle.tensors()


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    width = max((len(s) for s in seqs), default=0)
    ids = np.full((len(seqs), max(width, 1)), pad_id, dtype=np.int64)
    mask = np.zeros(ids.shape, dtype=bool)
    for r, seq in enumerate(seqs):
        ids[r, : len(seq)] = seq
        mask[r, : len(seq)] = True
    return ids, mask


def embed_texts(
    bundle: ModelBundle,
    segmenter,
    texts: Sequence[str],
    output: str = FINAL,
    batch_size: int = 64,
    max_len: Optional[int] = None,
) -> Tuple[np.ndarray, List[Optional[str]]]:
    """Encode texts one batch at a time.

    Returns ``(vectors, errors)``; rows that could not be embedded (empty after
    segmentation, or degenerate) are NaN and carry an error message.
    """
    max_len = max_len or bundle.config.max_len
    params = bundle.tensors()
    vecs = np.full((len(texts), bundle.config.d), np.nan)
    errors: List[Optional[str]] = [None] * len(texts)
    for start in range(0, len(texts), batch_size):
        idx = list(range(start, min(start + batch_size, len(texts))))
        seqs = {i: segmenter.encode(texts[i], max_len).ids for i in idx}
        for i in idx:
            if not seqs[i]:
                errors[i] = "empty token sequence"
        good = [i for i in idx if seqs[i]]
        if not good:
            continue
        ids, mask = pad_batch([seqs[i] for i in good], segmenter.vocab.pad_id)
        try:
            out, _ = forward(params, ids, mask, output)
            vecs[good] = out
        except DegenerateEmbeddingError:
            # fall back to one row at a time so a single bad row does not sink the batch
            for i in good:
                rid, rmask = pad_batch([seqs[i]], segmenter.vocab.pad_id)
                try:
                    vecs[i] = forward(params, rid, rmask, output)[0][0]
                except DegenerateEmbeddingError as exc:
                    errors[i] = str(exc)
    return vecs, errors
