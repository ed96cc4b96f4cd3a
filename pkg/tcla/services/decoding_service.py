"""
Decoding Service
Rates-to-kinematics decoders: sequence LSTM (headline) and per-bin ridge (deterministic baseline)
"""

import copy
from typing import List, Sequence

import numpy as np
import torch
from sklearn.linear_model import Ridge
from torch import nn

from tcla.config import settings
from tcla.exceptions import InsufficientSamplesError, NonFiniteError, ShapeError
from tcla.schemas.evaluation import DecoderConfig, DecoderKind
from tcla.utils.logger import get_evaluation_logger
from tcla.utils.seeding import STREAM_BATCHES, STREAM_DECODER, rng_stream, torch_seed

logger = get_evaluation_logger()

HOLDOUT_FRACTION = 0.1


def _stack(rates: Sequence[np.ndarray], kinematics: Sequence[np.ndarray]):
    if len(rates) == 0:
        raise InsufficientSamplesError("decoder needs at least one trial")
    if len(rates) != len(kinematics):
        raise ShapeError(f"{len(rates)} rate trajectories but {len(kinematics)} kinematic trajectories")
    x = np.stack([np.asarray(r, dtype=np.float64) for r in rates])       # [n, C, T]
    y = np.stack([np.asarray(k, dtype=np.float64) for k in kinematics])  # [n, 2, T]
    if x.shape[2] != y.shape[2]:
        raise ShapeError(f"rates have T={x.shape[2]}, kinematics T={y.shape[2]}")
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("kinematic targets contain non-finite values")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("rates contain non-finite values")
    return x, y


class DecoderModel:
    """Fitted decoder; predict maps [C, T] rate trajectories to [2, T] kinematics"""

    kind: DecoderKind

    def predict(self, rates: Sequence[np.ndarray]) -> List[np.ndarray]:
        raise NotImplementedError


# ============================================================================
# RIDGE
# ============================================================================

class RidgeDecoder(DecoderModel):
    """One linear map shared by every time bin, fit in closed form"""

    kind = DecoderKind.LINEAR_RIDGE

    def __init__(self, cfg: DecoderConfig):
        self.cfg = cfg
        self.model = Ridge(alpha=cfg.ridge_lambda, fit_intercept=True)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "RidgeDecoder":
        # time bins become rows: [n·T, C] -> [n·T, 2]
        self.model.fit(x.transpose(0, 2, 1).reshape(-1, x.shape[1]), y.transpose(0, 2, 1).reshape(-1, 2))
        return self

    def predict(self, rates: Sequence[np.ndarray]) -> List[np.ndarray]:
        out = []
        for r in rates:
            r = np.asarray(r, dtype=np.float64)
            out.append(self.model.predict(r.T).T)
        return out


# ============================================================================
# RECURRENT
# ============================================================================

class LSTMRegressor(nn.Module):
    """Sequence-to-sequence LSTM with a linear read-out per time step"""

    def __init__(self, num_inputs: int, hidden_size: int, num_outputs: int = 2):
        super().__init__()
        self.lstm = nn.LSTM(num_inputs, hidden_size, batch_first=True)
        self.head = nn.Linear(hidden_size, num_outputs)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        hidden, _ = self.lstm(x)
        return self.head(hidden)


class RecurrentDecoder(DecoderModel):
    """
    LSTM on standardized rates, regressing standardized kinematics

    A held-out tenth of the training trials drives early stopping; with a
    single trial there is no holdout and training runs for max_epochs.
    """

    kind = DecoderKind.RECURRENT

    def __init__(self, cfg: DecoderConfig):
        self.cfg = cfg
        self.network = None
        self.x_mean = self.x_std = self.y_mean = self.y_std = None

    def _inputs(self, x: np.ndarray) -> torch.Tensor:
        # [n, C, T] -> [n, T, C]
        return torch.from_numpy(((x - self.x_mean) / self.x_std).transpose(0, 2, 1).astype(np.float32))

    def fit(self, x: np.ndarray, y: np.ndarray) -> "RecurrentDecoder":
        cfg = self.cfg
        torch.set_num_threads(settings.TORCH_NUM_THREADS)
        n = x.shape[0]
        order = rng_stream(cfg.seed, STREAM_DECODER).permutation(n)
        num_holdout = max(1, int(round(n * HOLDOUT_FRACTION))) if n > 1 else 0
        holdout, train = np.sort(order[:num_holdout]), np.sort(order[num_holdout:])

        self.x_mean = x[train].mean(axis=(0, 2), keepdims=True)[0]
        self.x_std = x[train].std(axis=(0, 2), keepdims=True)[0] + 1e-6
        self.y_mean = y[train].mean(axis=(0, 2), keepdims=True)[0]
        self.y_std = y[train].std(axis=(0, 2), keepdims=True)[0] + 1e-6

        inputs = self._inputs(x)
        targets = torch.from_numpy(((y - self.y_mean) / self.y_std).transpose(0, 2, 1).astype(np.float32))

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(torch_seed(cfg.seed, STREAM_DECODER))
            self.network = LSTMRegressor(x.shape[1], cfg.hidden_size)
        optimizer = torch.optim.Adam(self.network.parameters(), lr=cfg.learning_rate)
        loss_fn = nn.MSELoss()

        monitor = holdout if num_holdout else train
        best_loss, best_state, best_epoch, since_best = float("inf"), None, 0, 0
        for epoch in range(1, cfg.max_epochs + 1):
            self.network.train()
            shuffled = train[rng_stream(cfg.seed, STREAM_DECODER, STREAM_BATCHES, epoch).permutation(len(train))]
            for start in range(0, len(shuffled), cfg.batch_size):
                index = shuffled[start:start + cfg.batch_size]
                optimizer.zero_grad()
                loss = loss_fn(self.network(inputs[index]), targets[index])
                loss.backward()
                optimizer.step()

            self.network.eval()
            with torch.no_grad():
                monitored = float(loss_fn(self.network(inputs[monitor]), targets[monitor]))
            if monitored < best_loss:
                best_loss, best_state, best_epoch, since_best = monitored, copy.deepcopy(self.network.state_dict()), epoch, 0
            else:
                since_best += 1
                if num_holdout and since_best >= cfg.patience:
                    break

        if best_state is not None:
            self.network.load_state_dict(best_state)
        logger.debug(f"LSTM decoder: best epoch {best_epoch}, holdout MSE {best_loss:.4f}, {len(train)} train trials")
        return self

    def predict(self, rates: Sequence[np.ndarray]) -> List[np.ndarray]:
        x = np.stack([np.asarray(r, dtype=np.float64) for r in rates])
        self.network.eval()
        with torch.no_grad():
            out = self.network(self._inputs(x)).numpy().astype(np.float64)
        y = out.transpose(0, 2, 1) * self.y_std + self.y_mean
        return list(y)


class DecodingService:
    """Service for fitting kinematic decoders on inferred rates"""

    @staticmethod
    def train_decoder(rates: Sequence[np.ndarray], kinematics: Sequence[np.ndarray], cfg: DecoderConfig) -> DecoderModel:
        """
        Fit a decoder from per-trial rates [C, T] to kinematics [2, T]

        Raises:
            InsufficientSamplesError: empty input
            NonFiniteError: non-finite targets
        """
        x, y = _stack(rates, kinematics)
        if cfg.kind == DecoderKind.LINEAR_RIDGE:
            return RidgeDecoder(cfg).fit(x, y)
        return RecurrentDecoder(cfg).fit(x, y)
