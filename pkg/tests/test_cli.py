import io
import json
import sys

import numpy as np
import pytest

from desk import make_desk
from tokensurgery.cli import main
from tokensurgery.corpus import FrequencyTable
from tokensurgery.evaluate import read_sts
from tokensurgery.segmenter import Segmenter
from tokensurgery.store import TeacherDataset
from tokensurgery.vocab import Vocabulary


@pytest.fixture
def desk(tmp_path):
    return make_desk(tmp_path / "desk").parent


def run(*argv):
    return main([str(a) for a in argv])


def test_stagewise_cli(desk, tmp_path, monkeypatch, capsys):
    o = tmp_path / "o"
    o.mkdir()
    assert run("count", "--in", desk / "mono.jsonl", "--out", o / "mono.tsv", "--lengths", "1,2,3,4,5,6",
               "--top-n", 2000) == 0
    assert run("--threads", 2, "count", "--in", desk / "multi.jsonl", "--out", o / "multi.tsv",
               "--top-n", 2000) == 0
    assert FrequencyTable.load(o / "mono.tsv") == FrequencyTable.load(o / "mono.tsv")
    assert run("build-vocab", "--mono", o / "mono.tsv", "--multi", o / "multi.tsv", "--teacher",
               desk / "teacher.vsrg", "--target-size", 1024, "--top-k", 256, "--out", o / "vocab.txt") == 0
    vocab = Vocabulary.load(o / "vocab.txt")
    assert vocab.size == 1024

    assert run("count", "--in", desk / "mono.jsonl", "--vocab", o / "vocab.txt", "--out", o / "tok.tsv") == 0
    assert FrequencyTable.load(o / "tok.tsv").total_count > 0

    monkeypatch.setattr(sys, "stdin", io.StringIO("evler de\n"))
    assert run("encode", "--vocab", o / "vocab.txt") == 0
    ids = [int(x) for x in capsys.readouterr().out.split()]
    assert ids == Segmenter(vocab).encode("evler de").ids

    assert run("clone", "--teacher", desk / "teacher.vsrg", "--vocab", o / "vocab.txt",
               "--strategy", "weighted", "--out", o / "student.vsrg") == 0
    assert run("precompute", "--teacher", desk / "teacher.vsrg", "--in", desk / "multi.jsonl",
               "--quota", "tr=10,default=5", "--out", o / "ds.vsds", "--export-tsv", o / "ds.tsv") == 0
    ds = TeacherDataset.load(o / "ds.vsds")
    assert len(ds) == 10 + 4 * 5
    assert len((o / "ds.tsv").read_text(encoding="utf-8").splitlines()) == 30

    assert run("distill", "--model", o / "student.vsrg", "--data", o / "ds.vsds", "--batch", 8,
               "--epochs", 2, "--lr", 1e-3, "--ckpt-every", 3, "--out", o / "run") == 0
    assert (o / "run" / "model.vsrg").exists() and (o / "run" / "ckpt-000003.vsrg").exists()
    assert run("distill", "--model", o / "student.vsrg", "--data", o / "ds.vsds", "--batch", 8,
               "--epochs", 2, "--lr", 1e-3, "--ckpt-every", 3, "--out", o / "run2",
               "--resume", o / "run" / "ckpt-000003.vsrg") == 0
    a = (o / "run" / "model.vsrg").read_bytes()
    assert a == (o / "run2" / "model.vsrg").read_bytes()

    assert run("eval-sts", "--model", o / "run" / "model.vsrg", "--pairs", desk / "sts.tsv",
               "--out", o / "sts.json") == 0
    res = json.loads((o / "sts.json").read_text())
    assert res["n_pairs"] == len(read_sts(desk / "sts.tsv"))
    assert -100 <= res["pearson"] <= 100


def test_report(tmp_path, capsys):
    p = tmp_path / "scores.json"
    p.write_text(json.dumps({"a": {"category": "STS", "score": 60}, "b": {"category": "STS", "score": 80},
                             "c": {"category": "Retrieval", "score": 70}}))
    assert run("report", "--scores", p) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["macro_average"] == 70.0 and rep["categories"] == {"Retrieval": 70.0, "STS": 70.0}


def test_pipeline_subcommand(desk, tmp_path, capsys):
    assert run("pipeline", "--config", desk / "desk.toml", "--output-dir", tmp_path / "p") == 0
    manifest = json.loads(capsys.readouterr().out)
    assert len(manifest["artifacts"]) == 5
    assert (tmp_path / "p" / "manifest.json").exists()


def test_exit_codes(desk, tmp_path):
    (desk / "teacher.vsrg").rename(tmp_path / "elsewhere.vsrg")
    assert run("pipeline", "--config", desk / "desk.toml") == 1
    assert not (desk / "out").exists()
    assert run("clone", "--teacher", tmp_path / "nope.vsrg", "--vocab", tmp_path / "v", "--out", tmp_path / "x") == 3
    (tmp_path / "bad.vsrg").write_bytes(b"garbage!" * 10)
    assert run("eval-sts", "--model", tmp_path / "bad.vsrg", "--pairs", desk / "sts.tsv") == 3
    (tmp_path / "elsewhere.vsrg").rename(desk / "teacher.vsrg")
    (desk / "sts.tsv").write_text("x\ta\tb\n")
    assert run("pipeline", "--config", desk / "desk.toml") == 2
    assert run("count", "--in", tmp_path / "c.csv", "--out", tmp_path / "o.tsv") == 1


def test_toy_teacher(desk, tmp_path):
    out = tmp_path / "t.vsrg"
    assert run("toy-teacher", "--in", desk / "multi.jsonl", "--vocab-size", 400, "--dim", 8, "--hidden", 8,
               "--out", out) == 0
    from tokensurgery.bundle import ModelBundle

    b = ModelBundle.load(out)
    assert b.vocab.size == 400 and b.embedding.shape == (400, 8)
    assert np.isfinite(b.embedding).all()


def test_threads_env(monkeypatch, desk, tmp_path):
    monkeypatch.setenv("VSRG_THREADS", "2")
    assert run("count", "--in", desk / "mono.jsonl", "--out", tmp_path / "m.tsv", "--top-n", 50) == 0
    monkeypatch.delenv("VSRG_THREADS")
    assert run("count", "--in", desk / "mono.jsonl", "--out", tmp_path / "n.tsv", "--top-n", 50) == 0
    assert (tmp_path / "m.tsv").read_bytes() == (tmp_path / "n.tsv").read_bytes()


def test_pipeline_overrides(desk, tmp_path, monkeypatch):
    seen = {}

    def fake_run(config):
        seen["config"] = config
        return {"artifacts": []}

    monkeypatch.setattr("tokensurgery.cli.run_pipeline", fake_run)
    assert run("--seed", 9, "pipeline", "--config", desk / "desk.toml", "--set", "distill.lr_peak=1e-4",
               "--set", "clone.strategy=last", "--set", "vocab.lengths=[1, 2]") == 0
    cfg = seen["config"]
    assert cfg.train.lr_peak == 1e-4 and cfg.strategy.value == "last" and cfg.lengths == [1, 2]
    assert cfg.seed == 9 and cfg.train.seed == 9
    assert run("pipeline", "--config", desk / "desk.toml") == 0
    assert seen["config"].seed == 0
    with pytest.raises(SystemExit):
        run("pipeline", "--config", desk / "desk.toml", "--set", "nodot=1")
