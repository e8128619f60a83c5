"""Probabilistic calibration of per-channel reconstruction losses.

Each channel keeps the sorted log-losses of the training set. A test loss is
mapped to its upper-tail probability under that empirical distribution and
then to ``-log(p + delta)``; channel scores are merged with LogSumExp.
Logarithms are natural.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from blade.errors import DataError


@dataclass(frozen=True, eq=False)
class ChannelECDF:
    sorted_log_losses: np.ndarray
    epsilon: float = 1e-8
    delta: float = 1e-8

    def __post_init__(self):
        v = self.sorted_log_losses
        if v.ndim != 1 or len(v) == 0:
            raise DataError("ECDF needs at least one training loss")
        if not np.all(np.isfinite(v)) or np.any(np.diff(v) < 0):
            raise DataError("ECDF table must be finite and ascending")
        if self.epsilon <= 0 or self.delta <= 0:
            raise DataError("epsilon and delta must be positive")

    def __len__(self) -> int:
        return len(self.sorted_log_losses)

    def __call__(self, x):
        """Fraction of training log-losses ``<= x`` (right-closed step function)."""
        counts = np.searchsorted(self.sorted_log_losses, x, side="right")
        return counts / len(self.sorted_log_losses)


def fit_ecdf(training_losses: np.ndarray, epsilon: float = 1e-8, delta: float = 1e-8) -> list[ChannelECDF]:
    """One ECDF per channel from a (flows, N) array of training losses."""
    losses = np.asarray(training_losses, dtype=np.float64)
    if losses.ndim != 2 or losses.shape[0] == 0:
        raise DataError("training losses must be a non-empty (flows, channels) array")
    if np.any(losses < 0):
        raise DataError("reconstruction losses must be non-negative")
    return [ChannelECDF(np.sort(np.log(losses[:, n] + epsilon)), epsilon, delta)
            for n in range(losses.shape[1])]


def channel_score(loss, ecdf: ChannelECDF):
    """Upper-tail probability and score for one channel's test loss(es).

    Returns ``(p, a)`` with ``p = 1 - ECDF(log(loss + eps))`` and
    ``a = -log(p + delta)``.
    """
    loss = np.asarray(loss, dtype=np.float64)
    if np.any(loss < 0):
        raise DataError("reconstruction losses must be non-negative")
    p = 1.0 - ecdf(np.log(loss + ecdf.epsilon))
    return p, -np.log(p + ecdf.delta)


def aggregate_score(a) -> np.ndarray:
    """LogSumExp over the last axis with the max-shift for overflow safety."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] < 1:
        raise DataError("need at least one channel score")
    m = np.max(a, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=-1, keepdims=True)))[..., 0]


@dataclass(frozen=True, eq=False)
class FlowAnomalyScore:
    channel_scores: np.ndarray
    upper_tail: np.ndarray
    aggregate: float


def score_losses(losses: np.ndarray, ecdfs: list[ChannelECDF]):
    """Vectorized calibration of a (flows, N) loss array.

    Returns ``(p, a, alpha)`` arrays of shapes (flows, N), (flows, N), (flows,).
    """
    losses = np.atleast_2d(np.asarray(losses, dtype=np.float64))
    if losses.shape[1] != len(ecdfs):
        raise DataError(f"{losses.shape[1]} loss channels but {len(ecdfs)} fitted ECDFs")
    p = np.empty_like(losses)
    a = np.empty_like(losses)
    for n, ecdf in enumerate(ecdfs):
        p[:, n], a[:, n] = channel_score(losses[:, n], ecdf)
    return p, a, aggregate_score(a)


def score_flow(F: np.ndarray, autoencoder, ecdfs: list[ChannelECDF]) -> FlowAnomalyScore:
    """Encode, decode, measure per-channel loss and calibrate one (N, L) flow."""
    F = np.asarray(F, dtype=np.float64)
    if F.shape[0] != len(ecdfs):
        raise DataError(f"flow has {F.shape[0]} channels, model has {len(ecdfs)}")
    losses = autoencoder.channel_losses(F)[None]
    p, a, alpha = score_losses(losses, ecdfs)
    return FlowAnomalyScore(channel_scores=a[0], upper_tail=p[0], aggregate=float(alpha[0]))
