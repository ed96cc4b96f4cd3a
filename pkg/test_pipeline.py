"""
Tests for the pipeline steps, artifact caching and the command line
"""

import json

import pytest

from tcla.cli import main
from tcla.config import settings
from tcla.exceptions import DegenerateTargetError, MissingArtifactError
from tcla.schemas import ExperimentConfig
from tcla.schemas.reference import render_config_reference
from tcla.services.checkpoint_store import load_checkpoint
from tcla.services.pipeline_service import PipelineService, apply_overrides, run_full_experiment


def _cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def config(smoke_config_path):
    return ExperimentConfig.from_file(smoke_config_path)


# ============================================================================
# COMMAND LINE
# ============================================================================

def test_generate_writes_one_bundle_per_session(smoke_config_path, tmp_path):
    assert _cli("generate", "--config", smoke_config_path) == 0
    data = tmp_path / "out" / "data"
    for session_id in ("source", "target_01"):
        assert (data / session_id / "manifest.json").is_file()
        assert (data / session_id / "spikes.bin").is_file()
    if settings.LOG_TO_FILE:
        assert (tmp_path / "out" / "logs" / "pipeline.log").is_file()


def test_unknown_command_prints_usage(capsys):
    assert _cli("frobnicate") == 1
    err = capsys.readouterr().err
    assert "usage: tcla" in err
    assert "ERROR cli usage:" in err


def test_missing_config_is_a_validation_error(tmp_path, capsys):
    assert _cli("generate", "--config", tmp_path / "absent.json") == 1
    assert "ERROR generate invalid-config:" in capsys.readouterr().err


def test_invalid_config_rejected(smoke_config_path, capsys):
    data = json.loads(smoke_config_path.read_text(encoding="utf-8"))
    data["gen"]["num_directions"] = 1
    smoke_config_path.write_text(json.dumps(data), encoding="utf-8")
    assert _cli("generate", "--config", smoke_config_path) == 1
    assert "ERROR generate invalid-config:" in capsys.readouterr().err


def test_align_before_pretrain_fails_validation(smoke_config_path, capsys):
    assert _cli("generate", "--config", smoke_config_path) == 0
    assert _cli("align", "--config", smoke_config_path) == 1
    err = capsys.readouterr().err
    assert "ERROR align missing-artifact:" in err
    assert "run pretrain first" in err


def test_pretrain_before_generate_fails_validation(smoke_config_path, capsys):
    assert _cli("pretrain", "--config", smoke_config_path) == 1
    assert "ERROR pretrain missing-artifact:" in capsys.readouterr().err


def test_unknown_session_flag(smoke_config_path, capsys):
    assert _cli("generate", "--config", smoke_config_path) == 0
    assert _cli("pretrain", "--config", smoke_config_path) == 0
    assert _cli("align", "--config", smoke_config_path, "--session", "target_09") == 1
    err = capsys.readouterr().err
    assert "ERROR align unknown-session:" in err
    assert "target_09" in err


def _failing_decode(self, method, session_id, run, ckpt=None):
    raise DegenerateTargetError(f"truth is constant for {session_id}")


def test_runtime_error_names_the_inner_step(monkeypatch, smoke_config_path, capsys):
    assert _cli("generate", "--config", smoke_config_path) == 0
    assert _cli("pretrain", "--config", smoke_config_path) == 0
    monkeypatch.setattr(PipelineService, "decode_cell", _failing_decode)
    assert _cli("evaluate", "--config", smoke_config_path) == 2
    assert "ERROR evaluate degenerate-target: [decode] truth is constant for target_01" in capsys.readouterr().err


def test_step_by_step_flow_with_ablation(smoke_config_path, tmp_path):
    out = tmp_path / "out"
    for step in ("generate", "pretrain", "align", "decode"):
        assert _cli(step, "--config", smoke_config_path, "--ablation", "ldnsws") == 0
    assert (out / "checkpoints" / "stage1" / "model.json").is_file()
    assert (out / "reports" / "cells" / "tcla" / "target_01" / "run_0.json").is_file()

    assert _cli("report", "--config", smoke_config_path, "--ablation", "ldnsws") == 0
    report = json.loads((out / "reports" / "report.json").read_text(encoding="utf-8"))
    methods = {e["method"] for e in report["entries"]}
    assert methods == {"tcla", "ldnsws"}
    assert len(report["entries"]) == 8
    assert {c["pairing"] for c in report["comparisons"]} == {"session_means", "cells"}

    # within-session baseline never sees the source session
    baseline = load_checkpoint(out / "checkpoints" / "ldnsws" / "target_01" / "run_0")
    assert baseline.session_ids == ["target_01"]
    assert baseline.stage == "ldnsws"


def test_evaluate_then_report_reproduces_report_bytes(smoke_config_path, tmp_path):
    reports = tmp_path / "out" / "reports"
    assert _cli("generate", "--config", smoke_config_path) == 0
    assert _cli("pretrain", "--config", smoke_config_path) == 0
    assert _cli("evaluate", "--config", smoke_config_path) == 0
    first = (reports / "report.json").read_bytes()
    assert (reports / "r2.csv").is_file()
    assert (reports / "projection_tcla.csv").is_file()

    (reports / "report.json").unlink()
    assert _cli("report", "--config", smoke_config_path) == 0
    assert (reports / "report.json").read_bytes() == first


# ============================================================================
# CACHING
# ============================================================================

def test_overrides_replace_seeds_and_weight(config):
    changed = apply_overrides(config, seed=42, beta3=2.0, ablation="ldnsws")
    assert changed.model.seed == changed.stage1.seed == changed.stage2.seed == changed.decoder.seed == 42
    assert changed.stage2.mmd.beta3 == 2.0
    assert changed.eval.methods == ["tcla", "ldnsws"]
    assert config.stage2.mmd.beta3 == 5.0


def test_stage_two_change_reuses_stage_one(config):
    pipeline = PipelineService(config)
    pipeline.generate()
    pipeline.pretrain()
    weights = pipeline.stage1_dir / "weights.bin"
    stamp = weights.stat().st_mtime_ns

    changed = PipelineService(apply_overrides(config, beta3=2.0))
    assert changed.pretrain_digest() == pipeline.pretrain_digest()
    assert changed.cell_digest("tcla", "target_01", 0) != pipeline.cell_digest("tcla", "target_01", 0)
    changed.pretrain()
    assert weights.stat().st_mtime_ns == stamp


def test_data_change_invalidates_downstream(config):
    pipeline = PipelineService(config)
    pipeline.generate()
    data = config.model_dump(mode="json")
    data["gen"]["master_seed"] = 99
    other = PipelineService(ExperimentConfig.model_validate(data))
    assert other.pretrain_digest() != pipeline.pretrain_digest()
    with pytest.raises(MissingArtifactError):
        other.load_sessions()


def test_cells_share_target_splits(config):
    pipeline = PipelineService(config)
    pipeline.generate()
    first = pipeline.splits("target_01")
    second = PipelineService(apply_overrides(config, beta3=0.0)).splits("target_01")
    for a, b in zip(first, second):
        assert a.equals(b)


def test_full_experiment_tags_errors_with_their_step(monkeypatch, config):
    monkeypatch.setattr(PipelineService, "decode_cell", _failing_decode)
    with pytest.raises(DegenerateTargetError) as info:
        run_full_experiment(config)
    assert info.value.step == "decode"


def test_full_experiment_is_reproducible_across_output_dirs(config, tmp_path):
    first = config.model_copy(update={"output_dir": str(tmp_path / "one")})
    second = config.model_copy(update={"output_dir": str(tmp_path / "two")})
    run_full_experiment(first)
    report = run_full_experiment(second)
    assert len(report.entries) == 4
    one = (tmp_path / "one" / "reports" / "report.json").read_bytes()
    two = (tmp_path / "two" / "reports" / "report.json").read_bytes()
    assert one == two


def test_config_reference_lists_nested_fields():
    text = render_config_reference()
    assert "| `stage2.mmd.beta3` | `5.0` |" in text
    assert "| `drifts[].num_trials` | `None` |" in text
    assert "| `target_split.ratios` | `(1, 1, 3)` |" in text
    assert "| `output_dir` | required |" in text
