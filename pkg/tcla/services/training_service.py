"""
Training Service
Stage One source pretraining, Stage Two target alignment and the within-session baseline
"""

import copy
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch

from tcla.config import settings
from tcla.core.dataio import SessionDataset
from tcla.core.model import (
    SessionLayers,
    SharedAutoencoder,
    TCLAModel,
    add_session_layers,
    forward,
    init_model,
    trainable_parameters,
)
from tcla.core.objectives import (
    EVAL_PHASE,
    TRAIN_PHASE,
    batch_masks,
    conditional_mmd,
    conditional_mmd_terms,
    group_by_condition,
    latent_reg,
    poisson_nll,
)
from tcla.exceptions import (
    DivergenceError,
    FrozenWeightError,
    InsufficientSamplesError,
    ShapeError,
)
from tcla.schemas.model import ArchitectureConfig
from tcla.schemas.training import StageOneConfig, StageTwoConfig
from tcla.services.checkpoint_store import Checkpoint
from tcla.utils.logger import LoggerManager, get_training_logger
from tcla.utils.seeding import STREAM_BATCHES, STREAM_CACHE, rng_stream

logger = get_training_logger()

EVAL_CHUNK = 256


@dataclass
class LossBreakdown:
    """Reduced loss of one batch or split, with its components"""
    total: torch.Tensor
    nll: float
    reg: float
    mmd: Optional[float] = None


def _reduce(values: torch.Tensor, reduction: str) -> torch.Tensor:
    return values.mean() if reduction == "mean" else values.sum()


def _spike_tensor(dataset: SessionDataset) -> torch.Tensor:
    return torch.from_numpy(dataset.spikes.astype(np.float32))


def _check_channels(dataset: SessionDataset, layers: SessionLayers) -> None:
    if dataset.num_channels != layers.num_channels:
        raise ShapeError(
            f"{dataset.session_id} has {dataset.num_channels} channels, layers expect {layers.num_channels}"
        )


# ============================================================================
# BATCH ORDER
# ============================================================================

def epoch_batches(num_trials: int, batch_size: int, seed: int, epoch: int) -> List[np.ndarray]:
    """Seeded per-epoch permutation cut into consecutive batches"""
    order = rng_stream(seed, STREAM_BATCHES, epoch).permutation(num_trials)
    return [order[i:i + batch_size] for i in range(0, num_trials, batch_size)]


def stratified_batches(labels: np.ndarray, batch_size: int, seed: int, epoch: int) -> List[np.ndarray]:
    """
    Seeded per-epoch batches that interleave directions round-robin

    Each direction is shuffled on its own; taking one trial per direction in
    turn spreads every present direction across the batches.
    """
    rng = rng_stream(seed, STREAM_BATCHES, epoch)
    queues = [rng.permutation(np.flatnonzero(labels == d)) for d in np.unique(labels)]
    depth = max((len(q) for q in queues), default=0)
    order = np.array([q[k] for k in range(depth) for q in queues if k < len(q)], dtype=np.int64)
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


# ============================================================================
# OBJECTIVES PER STAGE
# ============================================================================

class SourceObjective:
    """L_1 = Poisson NLL on masked bins + latent regularizer, shared and session layers trainable"""

    def __init__(self, shared: SharedAutoencoder, layers: SessionLayers, cfg: StageOneConfig):
        self.shared = shared
        self.layers = layers
        self.cfg = cfg

    def batch_loss(self, spikes: torch.Tensor, labels: np.ndarray, counters, phase: int = TRAIN_PHASE) -> LossBreakdown:
        input_mask, loss_mask = batch_masks(counters, spikes.shape[-1], self.cfg.dropout, phase)
        latents, rates = forward(spikes, self.layers, self.shared, input_mask, check_finite=False)
        nll = poisson_nll(rates, spikes, loss_mask)
        reg = latent_reg(latents, self.cfg.reg)
        total = _reduce(nll + reg, self.cfg.loss_reduction)
        return LossBreakdown(total, float(_reduce(nll, self.cfg.loss_reduction)), float(_reduce(reg, self.cfg.loss_reduction)))


class AlignmentObjective:
    """L_2 = Poisson NLL on masked bins + β3 · conditional MMD against cached source latents"""

    def __init__(
        self,
        shared: SharedAutoencoder,
        layers: SessionLayers,
        cfg: StageTwoConfig,
        source_cache: Dict[int, torch.Tensor],
    ):
        self.shared = shared
        self.layers = layers
        self.cfg = cfg
        self.source_cache = source_cache

    def mmd(self, latents: torch.Tensor, labels: np.ndarray) -> torch.Tensor:
        return conditional_mmd(self.source_cache, group_by_condition(latents, labels), self.cfg.mmd)

    def batch_loss(self, spikes: torch.Tensor, labels: np.ndarray, counters, phase: int = TRAIN_PHASE) -> LossBreakdown:
        input_mask, loss_mask = batch_masks(counters, spikes.shape[-1], self.cfg.dropout, phase)
        latents, rates = forward(spikes, self.layers, self.shared, input_mask, check_finite=False)
        nll = _reduce(poisson_nll(rates, spikes, loss_mask), self.cfg.loss_reduction)
        total = nll
        mmd_value = None
        beta3 = self.cfg.mmd.beta3
        if beta3 != 0.0 and phase == TRAIN_PHASE:
            try:
                mmd = self.mmd(latents, labels)
                total = total + beta3 * mmd
                mmd_value = float(mmd)
            except InsufficientSamplesError:
                logger.debug("Batch has no condition with enough samples; MMD term omitted")
        return LossBreakdown(total, float(nll), 0.0, mmd_value)


def _evaluate(objective, spikes: torch.Tensor, labels: np.ndarray) -> LossBreakdown:
    """
    Split-level loss with fixed evaluation masks (counter = trial index)

    For the alignment objective the MMD is measured on unmasked latents of the
    whole split.
    """
    n = spikes.shape[0]
    totals, nlls, regs = [], [], []
    reduction = objective.cfg.loss_reduction
    with torch.no_grad():
        for start in range(0, n, EVAL_CHUNK):
            stop = min(n, start + EVAL_CHUNK)
            part = objective.batch_loss(spikes[start:stop], labels[start:stop], range(start, stop), EVAL_PHASE)
            weight = (stop - start) if reduction == "mean" else 1
            totals.append(float(part.total) * weight)
            nlls.append(part.nll * weight)
            regs.append(part.reg * weight)
        denominator = n if reduction == "mean" else 1
        total = sum(totals) / denominator
        result = LossBreakdown(torch.tensor(total, dtype=torch.float64), sum(nlls) / denominator, sum(regs) / denominator)

        if isinstance(objective, AlignmentObjective) and objective.cfg.mmd.beta3 != 0.0:
            latents, _ = forward(spikes, objective.layers, objective.shared, check_finite=False)
            try:
                mmd = float(objective.mmd(latents, labels))
                result.mmd = mmd
                result.total = torch.tensor(total + objective.cfg.mmd.beta3 * mmd, dtype=torch.float64)
            except InsufficientSamplesError:
                logger.warning("Validation split has no condition usable for the MMD")
    return result


# ============================================================================
# EPOCH LOOP
# ============================================================================

def _record(epoch: int, train: LossBreakdown, val: LossBreakdown, batch_losses: List[float]) -> dict:
    return {
        "epoch": epoch,
        "train_loss": float(train.total),
        "val_loss": float(val.total),
        "nll": val.nll,
        "reg": val.reg,
        "mmd": val.mmd,
        "batch_losses": batch_losses,
    }


def _snapshot(modules: List[torch.nn.Module]) -> List[dict]:
    return [copy.deepcopy(m.state_dict()) for m in modules]


def _restore(modules: List[torch.nn.Module], states: List[dict]) -> None:
    for module, state in zip(modules, states):
        module.load_state_dict(state)


def _fit(
    objective,
    params: List[torch.nn.Parameter],
    train: SessionDataset,
    val: SessionDataset,
    cfg,
    learning_rate: float,
    batcher: Callable[[int], List[np.ndarray]],
    make_checkpoint: Callable[[List[dict]], Checkpoint],
    stage: str,
) -> List[dict]:
    """
    Adam over params with early stopping on validation loss

    Restores the best-validation weights in place and returns the history.
    History epoch 0 evaluates the initial weights.
    """
    torch.set_num_threads(settings.TORCH_NUM_THREADS)
    modules = [objective.shared, objective.layers]
    train_spikes, val_spikes = _spike_tensor(train), _spike_tensor(val)
    train_labels, val_labels = train.labels, val.labels
    optimizer = torch.optim.Adam(params, lr=learning_rate)

    start_time = time.time()
    val_loss = _evaluate(objective, val_spikes, val_labels)
    history = [_record(0, _evaluate(objective, train_spikes, train_labels), val_loss, [])]
    reference = abs(float(val_loss.total)) or 1.0
    best_loss, best_state, best_epoch = float(val_loss.total), _snapshot(modules), 0
    epochs_since_best = 0
    step = 0

    def diverged(value: float, epoch: int, where: str):
        _restore(modules, best_state)
        report = {"stage": stage, "epoch": epoch, "step": step, "loss": value, "where": where, "best_epoch": best_epoch}
        logger.error(f"{stage} diverged at epoch {epoch} step {step}: {where} loss {value}")
        return DivergenceError(
            f"{stage} loss diverged ({where} loss {value} at epoch {epoch})",
            checkpoint=make_checkpoint(history),
            report=report,
        )

    for epoch in range(1, cfg.max_epochs + 1):
        batch_losses = []
        for index in batcher(epoch):
            counters = [step * cfg.batch_size + position for position in range(len(index))]
            optimizer.zero_grad()
            loss = objective.batch_loss(train_spikes[index], train_labels[index], counters)
            value = float(loss.total)
            if not np.isfinite(value) or abs(value) > cfg.divergence_factor * reference:
                raise diverged(value, epoch, "train")
            loss.total.backward()
            optimizer.step()
            batch_losses.append(value)
            step += 1

        val_loss = _evaluate(objective, val_spikes, val_labels)
        val_value = float(val_loss.total)
        if not np.isfinite(val_value):
            raise diverged(val_value, epoch, "validation")
        train_value = float(np.mean(batch_losses))
        history.append(_record(epoch, LossBreakdown(torch.tensor(train_value, dtype=torch.float64), 0.0, 0.0), val_loss, batch_losses))
        logger.info(
            f"{stage} epoch {epoch}: train {train_value:.4f} val {val_value:.4f} "
            f"(nll {val_loss.nll:.4f} reg {val_loss.reg:.4f} mmd {val_loss.mmd})"
        )

        if val_value < best_loss:
            best_loss, best_state, best_epoch = val_value, _snapshot(modules), epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.early_stop_patience:
                logger.warning(f"{stage} early stop at epoch {epoch}; best epoch {best_epoch} val {best_loss:.4f}")
                break

    _restore(modules, best_state)
    LoggerManager.log_performance(logger, f"{stage} training ({len(history) - 1} epochs)", time.time() - start_time)
    return history


# ============================================================================
# OPERATIONS
# ============================================================================

def _train_source_like(
    train: SessionDataset,
    val: SessionDataset,
    arch: ArchitectureConfig,
    cfg: StageOneConfig,
    stage: str,
) -> Checkpoint:
    shared, layers = init_model(arch, train.num_channels, train.mean_rates(), session_id=train.session_id)
    _check_channels(val, layers)
    model = TCLAModel(shared)
    model.add(layers)
    params = trainable_parameters(model, [train.session_id], train_shared=True)
    objective = SourceObjective(shared, layers, cfg)
    snapshot = {"model": arch.model_dump(mode="json"), "stage1": cfg.model_dump(mode="json")}

    def make_checkpoint(history):
        return Checkpoint(shared, {train.session_id: layers}, list(history), snapshot, stage)

    history = _fit(
        objective, params, train, val, cfg, cfg.learning_rate,
        lambda epoch: epoch_batches(train.num_trials, cfg.batch_size, cfg.seed, epoch),
        make_checkpoint, stage,
    )
    return make_checkpoint(history)


def _shared_bytes(shared: SharedAutoencoder) -> Dict[str, bytes]:
    return {name: t.detach().cpu().numpy().tobytes() for name, t in shared.state_dict().items()}


class TrainingService:
    """Two-stage training protocol and inference over trained checkpoints"""

    @staticmethod
    def pretrain_source(
        source_train: SessionDataset,
        source_val: SessionDataset,
        arch: ArchitectureConfig,
        cfg: StageOneConfig,
    ) -> Checkpoint:
        """
        Stage One: jointly train the shared autoencoder and the source session layers

        Args:
            source_train: Source training split
            source_val: Source validation split (early stopping)
            arch: Architecture; arch.seed fixes the initialization
            cfg: Stage One hyperparameters

        Returns:
            Best-validation checkpoint tagged "stage1"
        """
        logger.info(
            f"Stage One on {source_train.session_id}: "
            f"{source_train.num_trials} train / {source_val.num_trials} val trials"
        )
        return _train_source_like(source_train, source_val, arch, cfg, "stage1")

    @staticmethod
    def train_within_session(
        target_train: SessionDataset,
        target_val: SessionDataset,
        arch: ArchitectureConfig,
        cfg: StageOneConfig,
    ) -> Checkpoint:
        """Within-session baseline: fresh shared and session layers trained with L_1 on target data only"""
        logger.info(f"Within-session baseline on {target_train.session_id}: {target_train.num_trials} train trials")
        return _train_source_like(target_train, target_val, arch, cfg, "ldnsws")

    @staticmethod
    def encode_source_cache(
        ckpt: Checkpoint,
        source_train: SessionDataset,
        cfg: StageTwoConfig,
        session_id: str,
    ) -> Dict[int, torch.Tensor]:
        """Latents of up to source_latent_cache_size source trials, unmasked, grouped by direction"""
        layers = ckpt.layers(session_id)
        _check_channels(source_train, layers)
        n = source_train.num_trials
        if cfg.source_latent_cache_size < n:
            chosen = np.sort(rng_stream(cfg.seed, STREAM_CACHE).permutation(n)[: cfg.source_latent_cache_size])
        else:
            chosen = np.arange(n)
        with torch.no_grad():
            latents, _ = forward(_spike_tensor(source_train)[chosen], layers, ckpt.shared)
        return {d: z.detach() for d, z in group_by_condition(latents, source_train.labels[chosen]).items()}

    @staticmethod
    def align_target(
        ckpt: Checkpoint,
        target_train: SessionDataset,
        target_val: SessionDataset,
        source_train: SessionDataset,
        cfg: StageTwoConfig,
        source_session_id: Optional[str] = None,
    ) -> Checkpoint:
        """
        Stage Two: train fresh target layers against the frozen shared module

        The input checkpoint is not modified. The returned checkpoint holds every
        session of ckpt plus the target, tagged "stage2".

        Raises:
            FrozenWeightError: a shared tensor changed
            DivergenceError: non-finite or exploding loss
        """
        source_id = source_session_id or source_train.session_id
        target_id = target_train.session_id
        aligned = ckpt.copy()
        shared = aligned.shared
        before = _shared_bytes(shared)

        source_cache = TrainingService.encode_source_cache(aligned, source_train, cfg, source_id)
        missing = sorted(set(source_cache) - set(np.unique(target_train.labels).tolist()))
        if missing and cfg.mmd.beta3 != 0.0 and cfg.mmd.conditional:
            logger.warning(f"Directions {missing} absent from {target_id} training data; skipped in the MMD")

        layers = add_session_layers(shared, target_train.num_channels, cfg.seed, target_id, target_train.mean_rates())
        _check_channels(target_val, layers)
        sessions = {sid: l for sid, l in aligned.sessions.items() if sid != target_id}
        sessions[target_id] = layers
        model = Checkpoint(shared, sessions).model()
        params = trainable_parameters(model, [target_id], train_shared=False)

        objective = AlignmentObjective(shared, layers, cfg, source_cache)
        snapshot = dict(ckpt.config)
        snapshot["stage2"] = cfg.model_dump(mode="json")

        def make_checkpoint(history):
            return Checkpoint(shared, dict(sessions), list(history), snapshot, "stage2")

        logger.info(
            f"Stage Two on {target_id}: {target_train.num_trials} train trials, "
            f"β3={cfg.mmd.beta3}, {sum(len(z) for z in source_cache.values())} cached source trials"
        )
        history = _fit(
            objective, params, target_train, target_val, cfg, cfg.learning_rate,
            lambda epoch: stratified_batches(target_train.labels, cfg.batch_size, cfg.seed, epoch),
            make_checkpoint, "stage2",
        )

        after = _shared_bytes(shared)
        changed = [name for name in before if before[name] != after.get(name)]
        if changed:
            raise FrozenWeightError(f"shared tensors changed during Stage Two: {', '.join(changed)}")
        model.requires_grad_(True)
        return make_checkpoint(history)

    @staticmethod
    def validation_mmd(
        ckpt: Checkpoint,
        dataset: SessionDataset,
        source_train: SessionDataset,
        cfg: StageTwoConfig,
        source_session_id: str,
    ) -> Tuple[float, List[int]]:
        """Conditional MMD between a session's unmasked latents and the source cache, plus skipped directions"""
        cache = TrainingService.encode_source_cache(ckpt, source_train, cfg, source_session_id)
        layers = ckpt.layers(dataset.session_id)
        with torch.no_grad():
            latents, _ = forward(_spike_tensor(dataset), layers, ckpt.shared)
            terms, skipped = conditional_mmd_terms(cache, group_by_condition(latents, dataset.labels), cfg.mmd)
        return float(sum(terms.values())), skipped

    @staticmethod
    def infer_rates(
        ckpt: Checkpoint,
        dataset: SessionDataset,
        session_id: Optional[str] = None,
    ) -> List[Tuple[np.ndarray, np.ndarray]]:
        """
        Unmasked forward pass over every trial

        Returns:
            One (latents [q, T], rates [C, T]) float32 pair per trial
        """
        layers = ckpt.layers(session_id or dataset.session_id)
        _check_channels(dataset, layers)
        spikes = _spike_tensor(dataset)
        pairs = []
        with torch.no_grad():
            for start in range(0, dataset.num_trials, EVAL_CHUNK):
                latents, rates = forward(spikes[start:start + EVAL_CHUNK], layers, ckpt.shared)
                pairs.extend(zip(latents.numpy().copy(), rates.numpy().copy()))
        return pairs
