import json

import pytest

from desk import make_desk
from tokensurgery.errors import StageError, ValidationError
from tokensurgery.pipeline import STAGES, PipelineConfig, run_pipeline, sha256_file, verify_manifest
from tokensurgery.vocab import Vocabulary


@pytest.fixture
def desk(tmp_path):
    return make_desk(tmp_path / "desk")


def test_desk_pipeline_produces_all_stages(desk):
    cfg = PipelineConfig.from_toml(desk)
    manifest = run_pipeline(cfg)
    assert [a["stage"] for a in manifest["artifacts"]] == list(STAGES)
    out = cfg.output_dir
    assert json.loads((out / "manifest.json").read_text()) == manifest
    assert Vocabulary.load(out / "vocab.txt").size == 1024
    metrics = (out / "distill" / "metrics.tsv").read_text().splitlines()
    assert len(metrics) == 101
    report = json.loads((out / "report.json").read_text())
    assert report["n_pairs"] + report["n_skipped"] == 30
    assert verify_manifest(out) == []
    (out / "vocab.txt").write_text("tampered")
    assert verify_manifest(out) == ["vocab.txt"]


def test_reruns_are_byte_identical(desk, tmp_path):
    a = run_pipeline(PipelineConfig.from_toml(desk, {"paths": {"output_dir": str(tmp_path / "r1")}}))
    b = run_pipeline(PipelineConfig.from_toml(desk, {"paths": {"output_dir": str(tmp_path / "r2")}}))
    assert a == b
    assert sha256_file(tmp_path / "r1" / "manifest.json") == sha256_file(tmp_path / "r2" / "manifest.json")


def test_different_seed_changes_artifacts(tmp_path):
    a = run_pipeline(PipelineConfig.from_toml(make_desk(tmp_path / "a", seed=0)))
    b = run_pipeline(PipelineConfig.from_toml(make_desk(tmp_path / "b", seed=1)))
    assert a != b


def test_missing_teacher_fails_before_any_stage(desk):
    (desk.parent / "teacher.vsrg").unlink()
    cfg = PipelineConfig.from_toml(desk)
    with pytest.raises(ValidationError, match="teacher"):
        run_pipeline(cfg)
    assert not cfg.output_dir.exists()


def test_stage_failure_is_named(desk):
    (desk.parent / "sts.tsv").write_text("not a score\ta\tb\n")
    with pytest.raises(StageError) as info:
        run_pipeline(PipelineConfig.from_toml(desk))
    assert info.value.stage == "eval-sts"


def test_config_errors(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[paths]\nmono_corpus = 'a'\n")
    with pytest.raises(ValidationError, match="missing required key"):
        PipelineConfig.from_toml(p)
    p.write_text("[paths]\nmono_corpus='a'\nmulti_corpus='b'\nteacher='c'\nsts_pairs='d'\noutput_dir='e'\n"
                 "[distill]\nlearning_rate = 1.0\n")
    with pytest.raises(ValidationError):
        PipelineConfig.from_toml(p)


def test_config_paths_resolve_relative_to_file(desk):
    cfg = PipelineConfig.from_toml(desk)
    assert cfg.teacher == desk.parent / "teacher.vsrg"
    assert cfg.quota.cap("tr") == 100 and cfg.quota.cap("xx") == 40
    assert cfg.train.batch_size == 20
