import math

import numpy as np
import pytest

from tokensurgery.bundle import random_bundle
from tokensurgery.cloner import clone
from tokensurgery.corpus import CorpusRecord
from tokensurgery.distill import (
    AdamW,
    TrainConfig,
    checkpoint_name,
    clip_grad_norm,
    load_checkpoint,
    lr_at,
    train,
    warmup_steps,
)
from tokensurgery.errors import TrainingAborted, ValidationError
from tokensurgery.segmenter import Segmenter
from tokensurgery.store import TeacherDataset, bundle_encoder, precompute
from tokensurgery.vocab import Vocabulary


def test_schedule_endpoints():
    cfg = TrainConfig(lr_peak=5e-5, warmup_ratio=0.01)
    assert warmup_steps(1000, 0.01) == 10
    assert lr_at(0, 1000, cfg) == 5e-6
    assert lr_at(9, 1000, cfg) == 5e-5
    assert lr_at(10, 1000, cfg) == 5e-5
    assert max(lr_at(s, 1000, cfg) for s in range(1001)) == 5e-5
    assert lr_at(1000, 1000, cfg) < 1e-12
    lrs = [lr_at(s, 1000, cfg) for s in range(10, 1001)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ValueError):
        lr_at(1001, 1000, cfg)


def test_warmup_never_zero():
    assert warmup_steps(10, 0.01) == 1
    assert warmup_steps(50, 0.01) == 1  # 0.5 rounds half up
    assert warmup_steps(150, 0.01) == 2


def test_clip_grad_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    assert clip_grad_norm(g, 1.0) == 5.0
    total = math.sqrt(sum(float((v * v).sum()) for v in g.values()))
    assert abs(total - 1.0) < 1e-12
    np.testing.assert_allclose(g["a"], [0.6, 0.0])
    small = {"a": np.array([0.3, 0.4])}
    clip_grad_norm(small, 1.0)
    np.testing.assert_array_equal(small["a"], [0.3, 0.4])


def test_adamw_first_step_and_decay():
    p = {"w": np.array([1.0, -2.0])}
    opt = AdamW(weight_decay=0.1)
    opt.step(p, {"w": np.array([0.5, -0.5])}, lr=0.01)
    # first step: m_hat = g, v_hat = g^2, so the update is lr * sign(g) up to eps
    want = np.array([1.0, -2.0]) * (1 - 0.01 * 0.1) - 0.01 * np.array([1.0, -1.0])
    np.testing.assert_allclose(p["w"], want, atol=1e-9)
    q = {"w": np.array([1.0])}
    AdamW(weight_decay=0.1).step(q, {"w": np.array([0.0])}, lr=0.5)
    assert q["w"][0] == pytest.approx(0.95)


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(warmup_ratio=1.0)
    with pytest.raises(ValidationError):
        TrainConfig(target="pooled")
    with pytest.raises(ValidationError):
        TrainConfig.from_dict({"lr": 1.0})
    assert TrainConfig.from_dict({"lr_peak": 1e-3}).lr_peak == 1e-3


WORDS = [f"▁w{i}" for i in range(40)]


def desk_setup(n=64, seed=0):
    vocab = Vocabulary.from_regular(WORDS)
    rng = np.random.default_rng(seed)
    texts = [" ".join(f"w{j}" for j in rng.integers(0, 40, size=rng.integers(2, 6))) for _ in range(n)]
    t = rng.normal(size=(n, 16))
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    ds = TeacherDataset(texts, ["tr"] * n, t)
    return random_bundle(vocab, 16, 32, seed=1), ds


def test_fixed_point():
    teacher = random_bundle(Vocabulary.from_regular(WORDS), 16, 32, seed=5, dtype=np.float64)
    student, _ = clone(teacher, teacher.vocab)
    recs = [CorpusRecord(f"w{i} w{(3 * i) % 40} w{(7 * i) % 40}", "tr") for i in range(40)]
    ds = TeacherDataset.from_records(precompute(recs, bundle_encoder(teacher, Segmenter(teacher.vocab))))
    cfg = TrainConfig(epochs=10, batch_size=8, lr_peak=5e-5, checkpoint_every=10**6)
    _, rows = train(student, ds, cfg)
    assert len(rows) == 50
    assert rows[0].loss < 1e-6
    assert max(r.loss for r in rows) < 1e-6


def test_progress_windows_decrease():
    bundle, ds = desk_setup()
    cfg = TrainConfig(epochs=125, batch_size=16, lr_peak=1e-2, checkpoint_every=10**6)
    _, rows = train(bundle, ds, cfg)
    losses = np.array([r.loss for r in rows])
    assert len(losses) == 500
    assert np.all((losses >= 0) & (losses <= 2))
    windows = losses.reshape(5, 100).mean(axis=1)
    assert np.all(np.diff(windows) < 0), windows


def test_training_does_not_mutate_input():
    bundle, ds = desk_setup(n=16)
    before = bundle.embedding.copy()
    train(bundle, ds, TrainConfig(epochs=1, batch_size=8, lr_peak=1e-2))
    np.testing.assert_array_equal(bundle.embedding, before)


def test_frozen_groups_do_not_move():
    bundle, ds = desk_setup(n=16)
    cfg = TrainConfig(epochs=2, batch_size=8, lr_peak=1e-2, train_head=False)
    out, _ = train(bundle, ds, cfg)
    for name, t in bundle.head_params.items():
        assert out.head_params[name].tobytes() == t.tobytes()
    for name, t in bundle.backbone_params.items():
        assert out.backbone_params[name].tobytes() == t.tobytes()
    assert not np.array_equal(out.embedding, bundle.embedding)


def test_resume_is_bit_identical(tmp_path):
    bundle, ds = desk_setup(n=64)
    cfg = TrainConfig(epochs=20, batch_size=16, lr_peak=1e-2, checkpoint_every=50)
    full, rows_full = train(bundle, ds, cfg, out_dir=tmp_path / "a")
    assert len(rows_full) == 80
    ckpt = tmp_path / "a" / checkpoint_name(50)
    assert ckpt.exists() and (tmp_path / "a" / checkpoint_name(80)).exists()
    _, state, _ = load_checkpoint(ckpt)
    assert state.step == 50
    resumed, rows_tail = train(bundle, ds, cfg, out_dir=tmp_path / "b", resume_from=ckpt)
    assert [r.step for r in rows_tail] == list(range(50, 80))
    assert [r.loss for r in rows_tail] == [r.loss for r in rows_full[50:]]
    for name, t in full.tensors().items():
        assert resumed.tensors()[name].tobytes() == t.tobytes()
    with pytest.raises(ValidationError):
        train(bundle, ds, TrainConfig(epochs=20, batch_size=16, lr_peak=2e-2, checkpoint_every=50),
              resume_from=ckpt)


def test_metrics_file(tmp_path):
    bundle, ds = desk_setup(n=16)
    train(bundle, ds, TrainConfig(epochs=2, batch_size=8, lr_peak=1e-2), out_dir=tmp_path)
    lines = (tmp_path / "metrics.tsv").read_text().splitlines()
    assert lines[0] == "step\tlr\tloss"
    assert [int(l.split("\t")[0]) for l in lines[1:]] == [0, 1, 2, 3]
    assert (tmp_path / "model.vsrg").exists()


def test_nonfinite_loss_aborts(tmp_path):
    bundle, ds = desk_setup(n=16)
    ds.final[:] = np.nan
    with pytest.raises(TrainingAborted) as info:
        train(bundle, ds, TrainConfig(epochs=1, batch_size=8), out_dir=tmp_path)
    assert info.value.last_checkpoint is None
