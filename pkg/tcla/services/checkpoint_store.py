"""
Checkpoint Store
Model container plus the model.json / weights.bin / history.jsonl directory format
"""

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import torch

from tcla.core.model import SessionLayers, SharedAutoencoder, TCLAModel
from tcla.exceptions import (
    CheckpointDigestError,
    CheckpointError,
    CheckpointVersionError,
    UnknownSessionError,
)
from tcla.schemas.model import ArchitectureConfig
from tcla.utils.logger import LoggerManager

logger = LoggerManager.get_logger('checkpoint_store')

CHECKPOINT_VERSION = 1
MODEL_FILE = "model.json"
WEIGHTS_FILE = "weights.bin"
HISTORY_FILE = "history.jsonl"
WEIGHT_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    """Shared module, per-session layers, training history and the config that produced them"""
    shared: SharedAutoencoder
    sessions: Dict[str, SessionLayers]
    history: List[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    stage: str = "stage1"

    def layers(self, session_id: str) -> SessionLayers:
        if session_id not in self.sessions:
            raise UnknownSessionError(f"session {session_id!r} not in checkpoint (has {', '.join(self.sessions)})")
        return self.sessions[session_id]

    @property
    def session_ids(self) -> List[str]:
        return list(self.sessions)

    def copy(self) -> "Checkpoint":
        return copy.deepcopy(self)

    def model(self) -> TCLAModel:
        """The shared module and every session's layers as one TCLAModel (no copy)"""
        model = TCLAModel(self.shared)
        for layers in self.sessions.values():
            model.add(layers)
        return model

    def named_tensors(self) -> List[Tuple[str, torch.Tensor]]:
        """Shared tensors first, then each session's in insertion order"""
        tensors = [(f"shared.{name}", t) for name, t in self.shared.state_dict().items()]
        for session_id, layers in self.sessions.items():
            tensors.extend((f"sessions.{session_id}.{name}", t) for name, t in layers.state_dict().items())
        return tensors


# ============================================================================
# SAVE / LOAD
# ============================================================================

def _encode_weights(ckpt: Checkpoint) -> Tuple[bytes, List[dict]]:
    chunks = []
    index = []
    offset = 0
    for name, tensor in ckpt.named_tensors():
        data = tensor.detach().cpu().numpy().astype(WEIGHT_DTYPE).tobytes(order="C")
        index.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    return b"".join(chunks), index


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """
    Write a checkpoint directory

    Returns:
        sha256 of weights.bin
    """
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    weights, index = _encode_weights(ckpt)
    digest = hashlib.sha256(weights).hexdigest()

    manifest = {
        "version": CHECKPOINT_VERSION,
        "stage": ckpt.stage,
        "architecture": ckpt.shared.arch.model_dump(mode="json"),
        "sessions": {sid: {"num_channels": layers.num_channels} for sid, layers in ckpt.sessions.items()},
        "tensors": index,
        "weights_sha256": digest,
        "config": ckpt.config,
    }
    (directory / WEIGHTS_FILE).write_bytes(weights)
    with open(directory / MODEL_FILE, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(directory / HISTORY_FILE, "w", encoding="utf-8") as f:
        for record in ckpt.history:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    logger.info(f"Saved {ckpt.stage} checkpoint with sessions {ckpt.session_ids} to {directory}")
    return digest


def load_checkpoint(path) -> Checkpoint:
    """Read and verify a checkpoint directory written by save_checkpoint"""
    directory = Path(path)
    model_path = directory / MODEL_FILE
    weights_path = directory / WEIGHTS_FILE
    if not model_path.is_file() or not weights_path.is_file():
        raise CheckpointError(f"checkpoint files missing under {directory}")

    with open(model_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {manifest.get('version')!r} unsupported (expected {CHECKPOINT_VERSION})"
        )

    weights = weights_path.read_bytes()
    if hashlib.sha256(weights).hexdigest() != manifest["weights_sha256"]:
        raise CheckpointDigestError(f"{weights_path} does not match its recorded digest")

    arch = ArchitectureConfig.model_validate(manifest["architecture"])
    with torch.random.fork_rng(devices=[]):
        shared = SharedAutoencoder(arch)
        sessions = {
            sid: SessionLayers(sid, info["num_channels"], arch.embed_width)
            for sid, info in manifest["sessions"].items()
        }

    states: Dict[str, dict] = {"shared": {}, **{sid: {} for sid in sessions}}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        values = np.frombuffer(weights, dtype=WEIGHT_DTYPE, count=count, offset=entry["offset"])
        tensor = torch.from_numpy(values.astype(np.float32).reshape(entry["shape"]))
        name = entry["name"]
        if name.startswith("shared."):
            states["shared"][name[len("shared."):]] = tensor
        else:
            _, session_id, local = name.split(".", 2)
            if session_id not in sessions:
                raise CheckpointError(f"tensor {name} belongs to an undeclared session")
            states[session_id][local] = tensor

    try:
        shared.load_state_dict(states.pop("shared"))
        for sid, state in states.items():
            sessions[sid].load_state_dict(state)
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint tensors do not fit the architecture: {e}")

    history = []
    history_path = directory / HISTORY_FILE
    if history_path.is_file():
        with open(history_path, "r", encoding="utf-8") as f:
            history = [json.loads(line) for line in f if line.strip()]

    return Checkpoint(
        shared=shared,
        sessions=sessions,
        history=history,
        config=manifest.get("config", {}),
        stage=manifest.get("stage", "stage1"),
    )
