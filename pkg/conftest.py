"""
Shared pytest fixtures: tiny configs and sessions that train in seconds
"""

import json

import pytest

from tcla.core.dataio import split_session
from tcla.core.synthgen import make_multisession
from tcla.schemas import (
    ArchitectureConfig,
    DecoderConfig,
    DriftConfig,
    DropoutConfig,
    EvalConfig,
    GenConfig,
    MMDConfig,
    RegConfig,
    SplitSpec,
    StageOneConfig,
    StageTwoConfig,
)


@pytest.fixture
def tiny_gen():
    return GenConfig(
        num_directions=4,
        trials_per_session=40,
        num_channels=12,
        num_bins=20,
        reach_duration_bins=12,
        tuning_depth=2.0,
        master_seed=3,
    )


@pytest.fixture
def tiny_drifts():
    return [
        DriftConfig(session_seed=0),
        DriftConfig(session_seed=1, permute_fraction=0.3, gain_log_std=0.2, tuning_rotation_rad=0.3),
    ]


@pytest.fixture
def tiny_sessions(tiny_gen, tiny_drifts):
    return make_multisession(tiny_gen, tiny_drifts)


@pytest.fixture
def tiny_arch():
    return ArchitectureConfig(embed_width=16, latent_dim=4, num_blocks=1, kernel_width=3, seed=5)


@pytest.fixture
def stage1_cfg():
    return StageOneConfig(
        reg=RegConfig(smooth_window=3),
        dropout=DropoutConfig(mask_rate=0.25, seed_stream=1),
        batch_size=16,
        max_epochs=3,
        early_stop_patience=2,
        seed=2,
    )


@pytest.fixture
def stage2_cfg():
    return StageTwoConfig(
        mmd=MMDConfig(max_samples_per_condition=64),
        dropout=DropoutConfig(mask_rate=0.25, seed_stream=4),
        batch_size=16,
        max_epochs=3,
        early_stop_patience=2,
        source_latent_cache_size=24,
        seed=6,
    )


@pytest.fixture
def source_splits(tiny_sessions):
    return split_session(tiny_sessions[0], SplitSpec(ratios=(8, 1, 1), seed=1))


@pytest.fixture
def target_splits(tiny_sessions):
    return split_session(tiny_sessions[1], SplitSpec(ratios=(1, 1, 3), seed=2))


@pytest.fixture
def ridge_cfg():
    return DecoderConfig(kind="linear_ridge", ridge_lambda=1e-6)


@pytest.fixture
def smoke_config_path(tmp_path, tiny_gen, tiny_drifts, tiny_arch, stage1_cfg, stage2_cfg):
    """Experiment JSON writing into tmp_path/out"""
    config = {
        "output_dir": str(tmp_path / "out"),
        "gen": tiny_gen.model_dump(mode="json"),
        "drifts": [d.model_dump(mode="json") for d in tiny_drifts],
        "model": tiny_arch.model_dump(mode="json"),
        "stage1": stage1_cfg.model_dump(mode="json"),
        "stage2": stage2_cfg.model_dump(mode="json"),
        "decoder": DecoderConfig(kind="linear_ridge").model_dump(mode="json"),
        "eval": EvalConfig(runs_per_session=1, bootstrap_resamples=50, methods=["tcla"]).model_dump(mode="json"),
    }
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path
