"""Recurrent sequence autoencoder over N x L feature matrices.

Encoder: bidirectional GRU along the length-L axis (N inputs per step),
residual self-attention over the L positions, mean pooling, MLP head -> Z.
Decoder: Z projected and broadcast to L steps plus a learned position
embedding, bidirectional GRU, per-step linear map back to N channels.

The same class backs the flow autoencoder (N = 3 packet channels, length L)
and the behavior extractor (3 rows, length W).
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from blade.config import EncoderConfig, TrainingConfig
from blade.errors import ConfigError, DataError, ModelError, NotFittedError, TrainingError

logger = logging.getLogger(__name__)


def reconstruction_losses(F: np.ndarray, F_hat: np.ndarray) -> np.ndarray:
    """Per-channel mean squared error over the last (length) axis.

    Works on a single (N, L) pair or stacked (..., N, L) batches.
    """
    F = np.asarray(F, dtype=np.float64)
    F_hat = np.asarray(F_hat, dtype=np.float64)
    if F.shape != F_hat.shape:
        raise DataError(f"shape mismatch: {F.shape} vs {F_hat.shape}")
    return np.mean((F - F_hat) ** 2, axis=-1)


class SequenceAutoencoder(nn.Module):
    def __init__(self, n_channels: int, length: int, hidden_size: int, latent_dim: int,
                 num_layers: int = 2, attention_heads: int = 1):
        super().__init__()
        self.n_channels = n_channels
        self.length = length
        width = 2 * hidden_size
        self.encoder_rnn = nn.GRU(n_channels, hidden_size, num_layers, batch_first=True,
                                  bidirectional=True)
        self.attention = nn.MultiheadAttention(width, attention_heads, batch_first=True)
        self.head = nn.Sequential(nn.Linear(width, width), nn.ReLU(), nn.Linear(width, latent_dim))
        self.expand = nn.Linear(latent_dim, hidden_size)
        self.position = nn.Parameter(torch.zeros(length, hidden_size))
        nn.init.normal_(self.position, std=0.1)
        self.decoder_rnn = nn.GRU(hidden_size, hidden_size, num_layers, batch_first=True,
                                  bidirectional=True)
        self.out = nn.Linear(width, n_channels)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """(B, N, L) -> (B, latent_dim)."""
        H, _ = self.encoder_rnn(x.transpose(1, 2))
        attended, _ = self.attention(H, H, H, need_weights=False)
        return self.head((H + attended).mean(dim=1))

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        """(B, latent_dim) -> (B, N, L)."""
        steps = self.expand(z).unsqueeze(1) + self.position.unsqueeze(0)
        D, _ = self.decoder_rnn(steps)
        return self.out(D).transpose(1, 2)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        z = self.encode(x)
        return z, self.decode(z)


@dataclass
class TrainingCurve:
    epoch_loss: list[float] = field(default_factory=list)


class FlowAutoencoder:
    """Fitted sequence autoencoder plus the per-channel input standardization.

    Inputs and outputs of :meth:`encode` / :meth:`decode` are in the caller's
    units; :meth:`channel_losses` measures reconstruction error on the
    standardized scale, which is what training minimizes.
    """

    def __init__(self, config: EncoderConfig, n_channels: int, length: int):
        config.validate()
        self.config = config
        self.n_channels = n_channels
        self.length = length
        self.mean: np.ndarray | None = None
        self.std: np.ndarray | None = None
        self.curve = TrainingCurve()
        self.seed = config.training.seed if config.training.seed is not None else 0
        torch.manual_seed(self.seed)
        self.module = SequenceAutoencoder(n_channels, length, config.hidden_size, config.latent_dim,
                                          config.num_recurrent_layers, config.attention_heads)
        self.module.eval()

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[1:] != (self.n_channels, self.length):
            raise DataError(
                f"expected input of shape (*, {self.n_channels}, {self.length}), got {X.shape}"
            )
        if not self.fitted:
            raise NotFittedError("autoencoder")
        return X

    def normalize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean[:, None]) / self.std[:, None]

    def denormalize(self, X: np.ndarray) -> np.ndarray:
        return X * self.std[:, None] + self.mean[:, None]

    def _dtype(self):
        return next(self.module.parameters()).dtype

    def _batched(self, fn, X: np.ndarray, batch: int = 2048) -> np.ndarray:
        out = []
        with torch.no_grad():
            for i in range(0, len(X), batch):
                t = torch.as_tensor(X[i:i + batch], dtype=self._dtype())
                out.append(fn(t).double().numpy())
        if not out:
            return np.zeros((0,))
        return np.concatenate(out)

    def encode(self, X: np.ndarray) -> np.ndarray:
        """Latent vectors for one (N, L) matrix or a (B, N, L) stack."""
        single = np.ndim(X) == 2
        Xn = self.normalize(self._check(X))
        Z = self._batched(self.module.encode, Xn)
        return Z[0] if single else Z

    def decode(self, Z: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise NotFittedError("autoencoder")
        Z = np.asarray(Z, dtype=np.float64)
        single = Z.ndim == 1
        Z = np.atleast_2d(Z)
        if Z.shape[1] != self.config.latent_dim:
            raise DataError(f"latent length {Z.shape[1]} != {self.config.latent_dim}")
        out = self.denormalize(self._batched(self.module.decode, Z))
        return out[0] if single else out

    def embed(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Latents and standardized per-channel losses in one forward pass."""
        Xn = self.normalize(self._check(X))
        Z = self._batched(self.module.encode, Xn)
        Xhat = self._batched(self.module.decode, Z)
        if len(Xn) == 0:
            return Z.reshape(0, self.config.latent_dim), np.zeros((0, self.n_channels))
        return Z, reconstruction_losses(Xn, Xhat)

    def channel_losses(self, X: np.ndarray) -> np.ndarray:
        single = np.ndim(X) == 2
        _, losses = self.embed(X)
        return losses[0] if single else losses

    def objective(self, X: np.ndarray) -> float:
        """Training objective at the current weights: mean over flows and channels."""
        return float(np.mean(self.channel_losses(X)))

    # ------------------------------------------------------------------ training

    def fit(self, X: np.ndarray) -> "FlowAutoencoder":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1:] != (self.n_channels, self.length):
            raise DataError(f"training input must be (*, {self.n_channels}, {self.length})")
        if len(X) == 0:
            raise DataError("no training sequences")
        self.mean = X.mean(axis=(0, 2))
        std = X.std(axis=(0, 2))
        self.std = np.where(std > 1e-12, std, 1.0)
        Xn = torch.as_tensor(self.normalize(X), dtype=self._dtype())
        tc: TrainingConfig = self.config.training
        gen = torch.Generator().manual_seed(self.seed)
        opt = torch.optim.Adam(self.module.parameters(), lr=tc.learning_rate)
        self.module.train()
        n = len(Xn)
        for epoch in range(tc.epochs):
            perm = torch.randperm(n, generator=gen)
            total = 0.0
            for start in range(0, n, tc.batch_size):
                batch = Xn[perm[start:start + tc.batch_size]]
                _, recon = self.module(batch)
                loss = ((recon - batch) ** 2).mean()
                if not torch.isfinite(loss):
                    self.module.eval()
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch + 1}, batch starting {start}; "
                        f"input range [{batch.min().item():.3g}, {batch.max().item():.3g}], "
                        f"last epoch loss {self.curve.epoch_loss[-1] if self.curve.epoch_loss else 'n/a'}"
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(batch)
            self.curve.epoch_loss.append(total / n)
            logger.debug("epoch %d loss %.6f", epoch + 1, self.curve.epoch_loss[-1])
        self.module.eval()
        logger.info("trained autoencoder on %d sequences: loss %.5f -> %.5f", n,
                    self.curve.epoch_loss[0], self.curve.epoch_loss[-1])
        return self

    # --------------------------------------------------------------- persistence

    def state(self) -> dict:
        if not self.fitted:
            raise NotFittedError("autoencoder")
        return {
            "config": dataclasses.asdict(self.config),
            "n_channels": self.n_channels,
            "length": self.length,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "curve": list(self.curve.epoch_loss),
            "state_dict": self.module.state_dict(),
        }

    @classmethod
    def from_state(cls, state: dict) -> "FlowAutoencoder":
        try:
            raw = dict(state["config"])
            raw["training"] = TrainingConfig(**raw["training"])
            model = cls(EncoderConfig(**raw), state["n_channels"], state["length"])
            model.module.load_state_dict(state["state_dict"])
        except (KeyError, TypeError, RuntimeError, ConfigError) as exc:
            raise ModelError(f"corrupt autoencoder state: {exc}") from exc
        model.mean = np.asarray(state["mean"], dtype=np.float64)
        model.std = np.asarray(state["std"], dtype=np.float64)
        model.curve = TrainingCurve(list(state.get("curve", [])))
        model.module.eval()
        return model


def train_autoencoder(X: np.ndarray, config: EncoderConfig) -> FlowAutoencoder:
    """Fit a :class:`FlowAutoencoder` on a (B, N, L) stack of benign sequences."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise DataError("expected a (B, N, L) stack")
    if not np.all(np.isfinite(X)):
        raise DataError("training sequences contain non-finite values")
    return FlowAutoencoder(config, X.shape[1], X.shape[2]).fit(X)


def parameter_count(model: FlowAutoencoder) -> int:
    return sum(math.prod(p.shape) for p in model.module.parameters())
