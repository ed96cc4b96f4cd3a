"""
Tests for dataset bundles, spike binning and splitting
"""

import json

import numpy as np
import pytest

from tcla.core.dataio import (
    SessionDataset,
    apportion,
    bin_spikes,
    bundle_digest,
    read_bundle,
    split_session,
    velocity_from_position,
    write_bundle,
)
from tcla.core.synthgen import generate_session
from tcla.exceptions import (
    BundleSizeError,
    LabelRangeError,
    MalformedManifestError,
    MissingBundleFileError,
    SplitError,
    UnsupportedFormatError,
)
from tcla.schemas import DriftConfig, GenConfig, SplitSpec


def _minimal():
    return SessionDataset(
        session_id="tiny",
        spikes=np.array([[[3, 0]]]),
        kinematics=np.array([[[0.0, 1.5], [0.0, -2.25]]], dtype=np.float32),
        labels=np.array([1]),
        bin_width_ms=5.0,
        num_directions=2,
    )


# ============================================================================
# BUNDLES
# ============================================================================

def test_roundtrip_is_bit_exact(tmp_path, tiny_sessions):
    for session in tiny_sessions:
        digest = write_bundle(session, tmp_path / session.session_id)
        loaded = read_bundle(tmp_path / session.session_id)
        assert loaded.equals(session)
        assert bundle_digest(tmp_path / session.session_id) == digest


def test_minimal_bundle_sizes_and_manifest(tmp_path):
    write_bundle(_minimal(), tmp_path)
    assert (tmp_path / "spikes.bin").stat().st_size == 4
    assert (tmp_path / "kinematics.bin").stat().st_size == 16
    assert (tmp_path / "labels.bin").read_bytes() == b"\x00"
    manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["format_version"] == 1
    assert manifest["files"] == {"spikes": "spikes.bin", "kinematics": "kinematics.bin", "labels": "labels.bin"}
    assert (manifest["num_trials"], manifest["num_channels"], manifest["num_bins"]) == (1, 1, 2)
    assert (tmp_path / "spikes.bin").read_bytes() == b"\x03\x00\x00\x00"


def test_rewrite_gives_same_digest(tmp_path, tiny_sessions):
    assert write_bundle(tiny_sessions[0], tmp_path / "a") == write_bundle(tiny_sessions[0], tmp_path / "b")


def test_truncated_spikes_reports_size_mismatch(tmp_path, tiny_sessions):
    write_bundle(tiny_sessions[0], tmp_path)
    path = tmp_path / "spikes.bin"
    path.write_bytes(path.read_bytes()[:-2])
    with pytest.raises(BundleSizeError, match="spikes.bin"):
        read_bundle(tmp_path)


def test_missing_file_reported(tmp_path, tiny_sessions):
    write_bundle(tiny_sessions[0], tmp_path)
    (tmp_path / "labels.bin").unlink()
    with pytest.raises(MissingBundleFileError, match="labels.bin"):
        read_bundle(tmp_path)


def test_label_out_of_range_names_trial(tmp_path):
    write_bundle(_minimal(), tmp_path)
    (tmp_path / "labels.bin").write_bytes(bytes([2]))
    with pytest.raises(LabelRangeError, match="trial 0"):
        read_bundle(tmp_path)


def test_unsupported_version(tmp_path):
    write_bundle(_minimal(), tmp_path)
    manifest_path = tmp_path / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    manifest["format_version"] = 2
    manifest_path.write_text(json.dumps(manifest), encoding="utf-8")
    with pytest.raises(UnsupportedFormatError):
        read_bundle(tmp_path)


def test_manifest_that_is_not_json_is_a_bundle_error(tmp_path):
    write_bundle(_minimal(), tmp_path)
    (tmp_path / "manifest.json").write_text('{"format_version": 1,', encoding="utf-8")
    with pytest.raises(MalformedManifestError, match="not valid JSON"):
        read_bundle(tmp_path)


@pytest.mark.parametrize("field", ["num_trials", "session_id", "num_directions"])
def test_manifest_missing_field_is_a_bundle_error(tmp_path, field):
    write_bundle(_minimal(), tmp_path)
    manifest_path = tmp_path / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    del manifest[field]
    manifest_path.write_text(json.dumps(manifest), encoding="utf-8")
    with pytest.raises(MalformedManifestError, match=field):
        read_bundle(tmp_path)


def test_velocity_is_forward_difference_with_repeated_tail():
    position = np.array([[0.0, 1.0, 3.0, 6.0]])
    np.testing.assert_allclose(velocity_from_position(position, 5.0), [[200.0, 400.0, 600.0, 600.0]])


# ============================================================================
# BINNING
# ============================================================================

def test_half_open_bins():
    counts = bin_spikes([[0.0, 4.9], [5.0], []], t0=0.0, num_bins=2, bin_width_ms=5.0)
    np.testing.assert_array_equal(counts, [[2, 0], [0, 1], [0, 0]])


def test_binning_conserves_in_window_events():
    rng = np.random.default_rng(0)
    events = [rng.uniform(-20.0, 120.0, 200) for _ in range(5)]
    counts = bin_spikes(events, t0=0.0, num_bins=20, bin_width_ms=5.0)
    in_window = sum(int(np.sum((e >= 0.0) & (e < 100.0))) for e in events)
    assert counts.sum() == in_window


# ============================================================================
# SPLITS
# ============================================================================

@pytest.fixture
def session_200():
    gen = GenConfig(num_directions=8, trials_per_session=200, num_channels=6, num_bins=10, reach_duration_bins=8)
    return generate_session(gen, DriftConfig(session_seed=3))


@pytest.mark.parametrize("ratios, sizes", [((8, 1, 1), (160, 20, 20)), ((1, 1, 3), (40, 40, 120))])
def test_split_sizes(session_200, ratios, sizes):
    parts = split_session(session_200, SplitSpec(ratios=ratios, seed=5))
    assert tuple(p.num_trials for p in parts) == sizes


@pytest.mark.parametrize("ratios", [(8, 1, 1), (1, 1, 3)])
def test_stratified_split_within_one_trial_per_direction(session_200, ratios):
    parts = split_session(session_200, SplitSpec(ratios=ratios, seed=5))
    weights = np.asarray(ratios) / sum(ratios)
    for d in range(1, 9):
        total = int(np.sum(session_200.labels == d))
        for part, w in zip(parts, weights):
            count = int(np.sum(part.labels == d))
            assert count >= 1
            assert abs(count - total * w) <= 1


def test_split_is_a_deterministic_partition(tiny_sessions):
    session = tiny_sessions[0]
    spec = SplitSpec(ratios=(8, 1, 1), seed=9)
    first = split_session(session, spec)
    second = split_session(session, spec)
    for a, b in zip(first, second):
        assert a.equals(b)
    assert [p.num_trials for p in first] == [32, 4, 4]
    # trials are identified by their spike tensors
    combined = np.concatenate([s.spikes.reshape(s.num_trials, -1) for s in first])
    original = session.spikes.reshape(session.num_trials, -1)
    assert np.array_equal(np.unique(combined, axis=0), np.unique(original, axis=0))


def test_unstratified_split_sizes(session_200):
    parts = split_session(session_200, SplitSpec(ratios=(1, 1, 3), stratify_by_label=False, seed=1))
    assert [p.num_trials for p in parts] == [40, 40, 120]


def test_direction_smaller_than_parts_rejected():
    gen = GenConfig(num_directions=4, trials_per_session=8, num_channels=3, num_bins=4, reach_duration_bins=3)
    with pytest.raises(SplitError):
        split_session(generate_session(gen, DriftConfig()), SplitSpec(ratios=(1, 1, 3)))


def test_apportion_largest_remainder():
    np.testing.assert_array_equal(apportion(10, (1, 1, 1)), [4, 3, 3])
    np.testing.assert_array_equal(apportion(200, (8, 1, 1)), [160, 20, 20])
