"""
Dataset I/O
Session container, bit-exact bundle format, spike binning and train/val/test splitting
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from tcla.exceptions import (
    BundleError,
    BundleSizeError,
    ConfigError,
    LabelRangeError,
    MalformedManifestError,
    MissingBundleFileError,
    NonFiniteError,
    ShapeError,
    SplitError,
    UnsupportedFormatError,
)
from tcla.schemas.data import SplitSpec
from tcla.utils.logger import LoggerManager
from tcla.utils.seeding import STREAM_SPLIT, rng_stream

logger = LoggerManager.get_logger('dataio')

FORMAT_VERSION = 1
BUNDLE_FILES = {"spikes": "spikes.bin", "kinematics": "kinematics.bin", "labels": "labels.bin"}
MANIFEST_NAME = "manifest.json"


# ============================================================================
# SESSION CONTAINER
# ============================================================================

@dataclass(frozen=True, eq=False)
class SessionDataset:
    """
    One session's trials

    spikes: int64 [n, C, T] counts per bin
    kinematics: float32 [n, 2, T] position (x, y)
    labels: int64 [n], directions 1..D
    """
    session_id: str
    spikes: np.ndarray
    kinematics: np.ndarray
    labels: np.ndarray
    bin_width_ms: float
    num_directions: int

    def __post_init__(self):
        spikes = np.asarray(self.spikes)
        kinematics = np.asarray(self.kinematics, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        if spikes.ndim != 3 or kinematics.ndim != 3 or labels.ndim != 1:
            raise ShapeError("spikes and kinematics must be 3-D, labels 1-D")
        n = spikes.shape[0]
        if kinematics.shape != (n, 2, spikes.shape[2]) or labels.shape != (n,):
            raise ShapeError(
                f"leading dimensions disagree: spikes {spikes.shape}, kinematics {kinematics.shape}, labels {labels.shape}"
            )
        if spikes.shape[2] < 2:
            raise ShapeError("invariant violated: T >= 2")
        if spikes.size and (spikes.min() < 0 or not np.array_equal(spikes, np.round(spikes))):
            raise ShapeError("invariant violated: spike counts are nonnegative integers")
        if labels.size and (labels.min() < 1 or labels.max() > self.num_directions):
            bad = int(np.flatnonzero((labels < 1) | (labels > self.num_directions))[0])
            raise LabelRangeError(f"label {labels[bad]} of trial {bad} outside 1..{self.num_directions}")
        if self.bin_width_ms <= 0:
            raise ConfigError("invariant violated: bin_width_ms > 0")
        object.__setattr__(self, "spikes", spikes.astype(np.int64, copy=False))
        object.__setattr__(self, "kinematics", kinematics)
        object.__setattr__(self, "labels", labels)

    @property
    def num_trials(self) -> int:
        return self.spikes.shape[0]

    @property
    def num_channels(self) -> int:
        return self.spikes.shape[1]

    @property
    def num_bins(self) -> int:
        return self.spikes.shape[2]

    @property
    def position(self) -> np.ndarray:
        return self.kinematics

    def velocity(self) -> np.ndarray:
        """Forward differences over the bin width; the last bin repeats the previous velocity"""
        return velocity_from_position(self.kinematics, self.bin_width_ms)

    def subset(self, indices) -> "SessionDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return SessionDataset(
            session_id=self.session_id,
            spikes=self.spikes[indices],
            kinematics=self.kinematics[indices],
            labels=self.labels[indices],
            bin_width_ms=self.bin_width_ms,
            num_directions=self.num_directions,
        )

    def mean_rates(self) -> np.ndarray:
        """Per-channel mean count per bin"""
        return self.spikes.mean(axis=(0, 2))

    def equals(self, other: "SessionDataset") -> bool:
        return (
            self.session_id == other.session_id
            and self.bin_width_ms == other.bin_width_ms
            and self.num_directions == other.num_directions
            and np.array_equal(self.spikes, other.spikes)
            and np.array_equal(self.kinematics.view(np.uint32), other.kinematics.view(np.uint32))
            and np.array_equal(self.labels, other.labels)
        )


def velocity_from_position(position: np.ndarray, bin_width_ms: float) -> np.ndarray:
    """[..., T] positions to [..., T] velocities in units per second"""
    position = np.asarray(position, dtype=np.float64)
    velocity = np.empty_like(position)
    velocity[..., :-1] = np.diff(position, axis=-1) / (bin_width_ms / 1000.0)
    velocity[..., -1] = velocity[..., -2]
    return velocity


# ============================================================================
# BUNDLE FORMAT
# ============================================================================

def _payloads(dataset: SessionDataset) -> Tuple[bytes, bytes, bytes]:
    if dataset.spikes.size and dataset.spikes.max() > np.iinfo(np.uint16).max:
        raise BundleError("spike count exceeds the u16 range of spikes.bin")
    if dataset.num_directions > 256:
        raise BundleError("num_directions exceeds the u8 range of labels.bin")
    return (
        dataset.spikes.astype("<u2").tobytes(order="C"),
        dataset.kinematics.astype("<f4").tobytes(order="C"),
        (dataset.labels - 1).astype("u1").tobytes(order="C"),
    )


def _digest(payloads) -> str:
    h = hashlib.sha256()
    for payload in payloads:
        h.update(payload)
    return h.hexdigest()


def write_bundle(dataset: SessionDataset, directory) -> str:
    """
    Write manifest.json plus the three little-endian payload files

    Args:
        dataset: Session to persist
        directory: Bundle directory (created if missing)

    Returns:
        str: sha256 hex digest of spikes|kinematics|labels payloads
    """
    directory = Path(directory)
    payloads = _payloads(dataset)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format_version": FORMAT_VERSION,
            "session_id": dataset.session_id,
            "num_trials": dataset.num_trials,
            "num_channels": dataset.num_channels,
            "num_bins": dataset.num_bins,
            "bin_width_ms": dataset.bin_width_ms,
            "num_directions": dataset.num_directions,
            "files": dict(BUNDLE_FILES),
        }
        for key, payload in zip(("spikes", "kinematics", "labels"), payloads):
            (directory / BUNDLE_FILES[key]).write_bytes(payload)
        with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2)
    except OSError as e:
        raise BundleError(f"cannot write bundle at {directory}: {e}") from e

    digest = _digest(payloads)
    logger.debug(f"Wrote bundle {dataset.session_id} -> {directory} ({digest[:12]})")
    return digest


def _read_payload(directory: Path, name: str, expected_bytes: int) -> bytes:
    path = directory / name
    if not path.exists():
        raise MissingBundleFileError(f"missing bundle file {name} in {directory}")
    payload = path.read_bytes()
    if len(payload) != expected_bytes:
        raise BundleSizeError(f"{name}: expected {expected_bytes} bytes, found {len(payload)}")
    return payload


def read_bundle(directory) -> SessionDataset:
    """
    Read and validate a bundle directory

    Raises:
        MissingBundleFileError, MalformedManifestError, UnsupportedFormatError,
        BundleSizeError, LabelRangeError
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise MissingBundleFileError(f"missing bundle file {MANIFEST_NAME} in {directory}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise MalformedManifestError(f"{manifest_path} is not valid JSON: {e}") from e
    if not isinstance(manifest, dict):
        raise MalformedManifestError(f"{manifest_path} must hold a JSON object")

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedFormatError(f"unsupported format_version {version!r} (supported: {FORMAT_VERSION})")

    try:
        n, c, t = manifest["num_trials"], manifest["num_channels"], manifest["num_bins"]
        num_directions = manifest["num_directions"]
        session_id, bin_width_ms = manifest["session_id"], float(manifest["bin_width_ms"])
        files = {key: manifest.get("files", BUNDLE_FILES)[key] for key in ("spikes", "kinematics", "labels")}
    except KeyError as e:
        raise MalformedManifestError(f"{manifest_path} lacks required field {e}") from e

    spikes = np.frombuffer(_read_payload(directory, files["spikes"], n * c * t * 2), dtype="<u2")
    kinematics = np.frombuffer(_read_payload(directory, files["kinematics"], n * 2 * t * 4), dtype="<f4")
    labels = np.frombuffer(_read_payload(directory, files["labels"], n), dtype="u1").astype(np.int64) + 1

    out_of_range = np.flatnonzero(labels > num_directions)
    if out_of_range.size:
        trial = int(out_of_range[0])
        raise LabelRangeError(f"labels.bin: trial {trial} has direction {labels[trial]} outside 1..{num_directions}")

    return SessionDataset(
        session_id=session_id,
        spikes=spikes.reshape(n, c, t).astype(np.int64),
        kinematics=kinematics.reshape(n, 2, t).astype(np.float32),
        labels=labels,
        bin_width_ms=bin_width_ms,
        num_directions=num_directions,
    )


def bundle_digest(directory) -> str:
    """Digest of an existing bundle, identical to what write_bundle returned"""
    directory = Path(directory)
    payloads = []
    for key in ("spikes", "kinematics", "labels"):
        path = directory / BUNDLE_FILES[key]
        if not path.exists():
            raise MissingBundleFileError(f"missing bundle file {path.name} in {directory}")
        payloads.append(path.read_bytes())
    return _digest(payloads)


# ============================================================================
# SPIKE BINNING
# ============================================================================

def bin_spikes(event_times: Sequence[Sequence[float]], t0: float, num_bins: int, bin_width_ms: float) -> np.ndarray:
    """
    Count events per channel in half-open bins [t0 + tΔ, t0 + (t+1)Δ)

    Args:
        event_times: Per-channel spike timestamps in ms
        t0: Window start in ms
        num_bins: Number of bins T
        bin_width_ms: Bin width Δ in ms

    Returns:
        np.ndarray: int64 counts [C, T]
    """
    if bin_width_ms <= 0:
        raise ConfigError("invariant violated: bin_width_ms > 0")
    counts = np.zeros((len(event_times), num_bins), dtype=np.int64)
    for channel, times in enumerate(event_times):
        times = np.asarray(times, dtype=np.float64)
        if times.size == 0:
            continue
        if not np.all(np.isfinite(times)):
            raise NonFiniteError(f"channel {channel} has non-finite timestamps")
        index = np.floor((times - t0) / bin_width_ms).astype(np.int64)
        index = index[(index >= 0) & (index < num_bins)]
        counts[channel] = np.bincount(index, minlength=num_bins)
    return counts


# ============================================================================
# SPLITTING
# ============================================================================

def apportion(total: int, weights: Sequence[int]) -> np.ndarray:
    """Largest-remainder apportionment of total over integer weights (ties: lower index)"""
    weights = np.asarray(weights, dtype=np.int64)
    quotas = total * weights / weights.sum()
    counts = np.floor(quotas).astype(np.int64)
    order = sorted(range(len(weights)), key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in order[: total - counts.sum()]:
        counts[k] += 1
    return counts


def _stratified_counts(sizes: List[int], weights: Sequence[int], targets: np.ndarray) -> np.ndarray:
    """Per-direction part sizes within ±1 of the exact share that still sum to the global targets"""
    weights = np.asarray(weights, dtype=np.float64)
    quotas = np.outer(sizes, weights / weights.sum())
    counts = np.floor(quotas).astype(np.int64)
    remainders = quotas - counts
    deficit = targets - counts.sum(axis=0)
    for d, size in enumerate(sizes):
        extra = size - counts[d].sum()
        order = sorted(range(len(weights)), key=lambda k: (-deficit[k], -remainders[d, k], k))
        for k in order[:extra]:
            counts[d, k] += 1
            deficit[k] -= 1
    return counts


def split_session(dataset: SessionDataset, spec: SplitSpec) -> Tuple[SessionDataset, SessionDataset, SessionDataset]:
    """
    Partition trials into (train, val, test)

    Stratified splitting apportions every direction separately; the seeded
    shuffle makes the partition deterministic given spec.seed.
    """
    parts = len(spec.ratios)
    targets = apportion(dataset.num_trials, spec.ratios)
    rng = rng_stream(spec.seed, STREAM_SPLIT)
    buckets: List[List[np.ndarray]] = [[] for _ in range(parts)]

    if spec.stratify_by_label:
        groups = []
        for direction in range(1, dataset.num_directions + 1):
            members = np.flatnonzero(dataset.labels == direction)
            if members.size == 0:
                logger.warning(f"{dataset.session_id}: direction {direction} has no trials to split")
                continue
            if members.size < parts:
                raise SplitError(
                    f"{dataset.session_id}: direction {direction} has {members.size} trials, fewer than {parts} split parts"
                )
            groups.append((direction, rng.permutation(members)))

        counts = _stratified_counts([g.size for _, g in groups], spec.ratios, targets)
        for (direction, members), row in zip(groups, counts):
            if np.any(row == 0):
                raise SplitError(
                    f"{dataset.session_id}: direction {direction} leaves an empty split cell under ratio {spec.label}"
                )
            for k, chunk in enumerate(np.split(members, np.cumsum(row)[:-1])):
                buckets[k].append(chunk)
    else:
        shuffled = rng.permutation(dataset.num_trials)
        for k, chunk in enumerate(np.split(shuffled, np.cumsum(targets)[:-1])):
            buckets[k].append(chunk)

    splits = tuple(
        dataset.subset(np.sort(np.concatenate(chunks)) if chunks else np.array([], dtype=np.int64))
        for chunks in buckets
    )
    logger.debug(
        f"Split {dataset.session_id} {spec.label}: "
        + "/".join(str(s.num_trials) for s in splits)
    )
    return splits
