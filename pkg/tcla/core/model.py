"""
TCLA Network
Session-specific 1x1 read-in/read-out layers around a shared temporal autoencoder
"""

import math
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import torch
from torch import nn

from tcla.exceptions import ConfigError, NonFiniteError, ShapeError
from tcla.schemas.model import ArchitectureConfig
from tcla.utils.logger import LoggerManager

logger = LoggerManager.get_logger('model')

RATE_CLAMP = 10.0
MIN_MEAN_RATE = 1e-3


class GatedTemporalBlock(nn.Module):
    """Residual block: x + proj(tanh(a) * sigmoid(b)), [a, b] = conv_k(x)"""

    def __init__(self, width: int, kernel_width: int):
        super().__init__()
        self.conv = nn.Conv1d(width, 2 * width, kernel_width, padding=kernel_width // 2)
        self.proj = nn.Conv1d(width, width, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        a, b = self.conv(x).chunk(2, dim=1)
        return x + self.proj(torch.tanh(a) * torch.sigmoid(b))


class SharedAutoencoder(nn.Module):
    """Encoder E -> q and mirrored decoder q -> E shared by every session"""

    def __init__(self, arch: ArchitectureConfig):
        super().__init__()
        self.arch = arch
        width = arch.embed_width
        self.encoder = nn.Sequential(
            *[GatedTemporalBlock(width, arch.kernel_width) for _ in range(arch.num_blocks)],
            nn.Conv1d(width, arch.latent_dim, 1),
        )
        self.decoder = nn.Sequential(
            nn.Conv1d(arch.latent_dim, width, 1),
            *[GatedTemporalBlock(width, arch.kernel_width) for _ in range(arch.num_blocks)],
        )

    @property
    def embed_width(self) -> int:
        return self.arch.embed_width

    @property
    def latent_dim(self) -> int:
        return self.arch.latent_dim

    def encode(self, embedding: torch.Tensor) -> torch.Tensor:
        return self.encoder(embedding)

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        return self.decoder(latents)


class SessionLayers(nn.Module):
    """Per-session Conv1d(kernel=1) projections between channel space and the embedding"""

    def __init__(self, session_id: str, num_channels: int, embed_width: int):
        super().__init__()
        self.session_id = session_id
        self.read_in = nn.Conv1d(num_channels, embed_width, 1)
        self.read_out = nn.Conv1d(embed_width, num_channels, 1)

    @property
    def num_channels(self) -> int:
        return self.read_in.in_channels

    @property
    def read_in_weight(self) -> torch.Tensor:
        return self.read_in.weight[:, :, 0]

    @property
    def read_out_weight(self) -> torch.Tensor:
        return self.read_out.weight[:, :, 0]

    def calibrate(self, mean_rates: Optional[np.ndarray]) -> None:
        """Small read-out weights and a log-mean-rate bias so initial rates sit at the channel means"""
        embed_width = self.read_out.in_channels
        with torch.no_grad():
            self.read_out.weight.normal_(0.0, 0.01 / math.sqrt(embed_width))
            if mean_rates is None:
                self.read_out.bias.zero_()
            else:
                mean_rates = np.maximum(np.asarray(mean_rates, dtype=np.float64), MIN_MEAN_RATE)
                if mean_rates.shape != (self.num_channels,):
                    raise ShapeError(f"mean_rates has shape {mean_rates.shape}, expected ({self.num_channels},)")
                self.read_out.bias.copy_(torch.from_numpy(np.log(mean_rates)).to(self.read_out.bias.dtype))


class TCLAModel(nn.Module):
    """Container of the shared module and every session's layers (one checkpoint)"""

    def __init__(self, shared: SharedAutoencoder):
        super().__init__()
        self.shared = shared
        self.sessions = nn.ModuleDict()

    def add(self, layers: SessionLayers) -> None:
        if layers.session_id in self.sessions:
            raise ConfigError(f"session {layers.session_id!r} already present")
        self.sessions[layers.session_id] = layers

    def layers(self, session_id: str) -> SessionLayers:
        return self.sessions[session_id]

    def forward(self, spikes: torch.Tensor, session_id: str, input_mask: Optional[torch.Tensor] = None):
        return forward(spikes, self.sessions[session_id], self.shared, input_mask, check_finite=False)


# ============================================================================
# OPERATIONS
# ============================================================================

def _check_dims(latent_dim: int, num_channels: int) -> None:
    if num_channels < 1:
        raise ConfigError("invariant violated: channel count >= 1")
    if latent_dim >= num_channels:
        raise ConfigError(f"invariant violated: latent_dim q={latent_dim} must be < channel count {num_channels}")


def init_model(
    arch: ArchitectureConfig,
    num_channels: int,
    mean_rates: Optional[np.ndarray] = None,
    session_id: str = "source",
) -> Tuple[SharedAutoencoder, SessionLayers]:
    """
    Build the shared module and the source session layers deterministically from arch.seed

    Args:
        arch: Architecture hyperparameters (E, q, blocks, kernel width, seed)
        num_channels: Source channel count C_source
        mean_rates: Source training mean count per bin per channel, for bias calibration
        session_id: Key of the source layers
    """
    _check_dims(arch.latent_dim, num_channels)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(arch.seed)
        shared = SharedAutoencoder(arch)
        layers = SessionLayers(session_id, num_channels, arch.embed_width)
        layers.calibrate(mean_rates)
    logger.debug(f"Initialized shared autoencoder E={arch.embed_width} q={arch.latent_dim} and layers for {session_id}")
    return shared, layers


def add_session_layers(
    shared: SharedAutoencoder,
    num_channels: int,
    seed: int,
    session_id: str,
    mean_rates: Optional[np.ndarray] = None,
) -> SessionLayers:
    """Fresh layers for a new session; the shared module is not touched"""
    _check_dims(shared.latent_dim, num_channels)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        layers = SessionLayers(session_id, num_channels, shared.embed_width)
        layers.calibrate(mean_rates)
    return layers


def _assert_finite(*modules: nn.Module) -> None:
    for module in modules:
        for name, param in module.named_parameters():
            if not torch.isfinite(param).all():
                raise NonFiniteError(f"parameter {name} contains non-finite values")


def forward(
    spikes: torch.Tensor,
    layers: SessionLayers,
    shared: SharedAutoencoder,
    input_mask: Optional[torch.Tensor] = None,
    check_finite: bool = True,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Spikes [C, T] or [B, C, T] to latents [(B,) q, T] and rates [(B,) C, T]

    input_mask (bool [T] or [B, T], True = masked) zeroes the masked bins on input.
    Rates are exp(clamp(a, -10, 10)) of the read-out pre-activation a.
    """
    single = spikes.dim() == 2
    x = spikes.unsqueeze(0) if single else spikes
    if x.dim() != 3 or x.shape[1] != layers.num_channels:
        raise ShapeError(f"spikes shape {tuple(spikes.shape)} does not match {layers.num_channels} channels")
    if check_finite:
        _assert_finite(layers, shared)

    x = x.to(layers.read_in.weight.dtype)
    if input_mask is not None:
        mask = input_mask.to(torch.bool)
        if mask.shape[-1] != x.shape[-1]:
            raise ShapeError(f"input_mask length {mask.shape[-1]} != T={x.shape[-1]}")
        keep = (~mask).to(x.dtype)
        x = x * (keep.unsqueeze(-2) if keep.dim() == 2 else keep)

    latents = shared.encode(layers.read_in(x))
    pre_activation = layers.read_out(shared.decode(latents))
    rates = torch.exp(torch.clamp(pre_activation, -RATE_CLAMP, RATE_CLAMP))
    if single:
        return latents[0], rates[0]
    return latents, rates


def parameter_partition(
    shared: SharedAutoencoder,
    layers_by_session: Dict[str, SessionLayers],
) -> Tuple[Set[str], Set[str]]:
    """
    Disjoint, exhaustive name sets (shared, session) using TCLAModel state-dict names
    """
    shared_names = {f"shared.{name}" for name, _ in shared.named_parameters()}
    session_names: Set[str] = set()
    for session_id, layers in layers_by_session.items():
        for name, _ in layers.named_parameters():
            full = f"sessions.{session_id}.{name}"
            if full in session_names or full in shared_names:
                raise ConfigError(f"duplicate parameter name {full}")
            session_names.add(full)
    return shared_names, session_names


def trainable_parameters(model: TCLAModel, session_ids: Sequence[str], train_shared: bool) -> List[nn.Parameter]:
    """
    Parameters the optimizer may update, chosen through parameter_partition

    The chosen sessions' layers are trainable, plus the shared set when
    train_shared is set. Every other parameter gets requires_grad False.
    """
    shared_names, session_names = parameter_partition(model.shared, dict(model.sessions.items()))
    prefixes = tuple(f"sessions.{sid}." for sid in session_ids)
    chosen = {name for name in session_names if name.startswith(prefixes)}
    if train_shared:
        chosen |= shared_names
    params = []
    for name, param in model.named_parameters():
        param.requires_grad_(name in chosen)
        if name in chosen:
            params.append(param)
    return params
