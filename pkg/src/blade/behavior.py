"""Behavior samples, the behavior extractor and the one-class boundary.

A behavior sample stacks, for the W flows of a window, three rows:

0. inter-flow gaps divided by the median training gap (first gap is 0);
1. flow anomaly scores divided by ``-log(delta)`` and clamped to [0, 1.5];
2. pseudo labels encoded as ``(O + 1) / (K + 1)`` so noise (-1) maps to 0.

Ablation variants replace row 1 with the raw mean channel loss (1), or drop
row 2 (2) or row 1 (3).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.preprocessing import StandardScaler
from sklearn.svm import OneClassSVM

from blade.autoencoder import FlowAutoencoder, train_autoencoder
from blade.config import EncoderConfig
from blade.errors import DataError, NotFittedError

logger = logging.getLogger(__name__)

SCORE_CLAMP = 1.5
ROWS = ("gap", "score", "label")

VARIANTS = {
    0: "full model",
    1: "w/o anomaly score estimation",
    2: "w/o pseudo labels",
    3: "w/o anomaly scores",
}


def variant_rows(variant: int) -> tuple[str, ...]:
    if variant == 2:
        return ("gap", "score")
    if variant == 3:
        return ("gap", "label")
    return ROWS


@dataclass
class BehaviorNormalizer:
    """Fitted scaling state for behavior-sample rows."""

    median_gap: float
    n_clusters: int
    delta: float = 1e-8
    variant: int = 0

    @property
    def score_scale(self) -> float:
        return -np.log(self.delta)

    @property
    def rows(self) -> tuple[str, ...]:
        return variant_rows(self.variant)

    def to_dict(self) -> dict:
        return {"median_gap": self.median_gap, "n_clusters": self.n_clusters,
                "delta": self.delta, "variant": self.variant}


def inter_flow_gaps(timestamps: np.ndarray) -> np.ndarray:
    ts = np.asarray(timestamps, dtype=np.float64)
    return np.concatenate([[0.0], np.diff(ts)]) if len(ts) else ts


def fit_normalizer(timestamp_windows, n_clusters: int, delta: float = 1e-8,
                   variant: int = 0) -> BehaviorNormalizer:
    gaps = np.concatenate([np.diff(np.asarray(ts, dtype=np.float64)) for ts in timestamp_windows])
    median = float(np.median(gaps)) if len(gaps) else 0.0
    return BehaviorNormalizer(median if median > 0 else 1.0, n_clusters, delta, variant)


def encode_labels(labels, n_clusters: int) -> np.ndarray:
    return (np.asarray(labels, dtype=np.float64) + 1.0) / (n_clusters + 1.0)


@dataclass(frozen=True, eq=False)
class BehaviorSample:
    matrix: np.ndarray
    rows: tuple[str, ...] = ROWS

    @property
    def W(self) -> int:
        return self.matrix.shape[1]


def assemble_behavior_sample(timestamps, scores, labels, norm: BehaviorNormalizer,
                             raw_losses=None) -> BehaviorSample:
    """Build the behavior matrix for one window.

    ``scores`` are flow anomaly scores; ``raw_losses`` (mean channel losses)
    are only read by ablation variant 1.
    """
    ts = np.asarray(timestamps, dtype=np.float64)
    W = len(ts)
    if len(scores) != W or len(labels) != W:
        raise DataError(f"misaligned window: {W} timestamps, {len(scores)} scores, {len(labels)} labels")
    if np.any(np.diff(ts) < 0):
        raise DataError("window timestamps must be non-decreasing")
    rows = {"gap": inter_flow_gaps(ts) / norm.median_gap,
            "label": encode_labels(labels, norm.n_clusters)}
    if norm.variant == 1:
        if raw_losses is None or len(raw_losses) != W:
            raise DataError("variant 1 needs one raw loss per flow")
        rows["score"] = np.asarray(raw_losses, dtype=np.float64)
    else:
        rows["score"] = np.clip(np.asarray(scores, dtype=np.float64) / norm.score_scale, 0.0, SCORE_CLAMP)
    matrix = np.stack([rows[r] for r in norm.rows])
    if not np.all(np.isfinite(matrix)):
        raise DataError("behavior sample has non-finite entries")
    return BehaviorSample(matrix, norm.rows)


def train_extractor(samples: np.ndarray, config: EncoderConfig) -> FlowAutoencoder:
    """Train the behavior autoencoder on a (M, rows, W) stack; its encoder is the extractor."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3 or len(samples) < 1:
        raise DataError("need at least one behavior sample")
    return train_autoencoder(samples, config)


class OneClassBoundary:
    """RBF one-class SVM on standardized behavior representations.

    ``decision_function`` < 0 means anomalous.
    """

    def __init__(self, nu: float = 0.05, gamma: float | None = None):
        self.nu = nu
        self.gamma = gamma
        self.scaler: StandardScaler | None = None
        self.svm: OneClassSVM | None = None

    @property
    def fitted(self) -> bool:
        return self.svm is not None

    def fit(self, X: np.ndarray) -> "OneClassBoundary":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or len(X) < 2:
            raise DataError("need at least 2 representations to fit the boundary")
        if np.all(np.ptp(X, axis=0) == 0):
            warnings.warn("all behavior representations are identical; boundary is trivial",
                          RuntimeWarning, stacklevel=2)
        self.scaler = StandardScaler().fit(X)
        gamma = self.gamma if self.gamma is not None else 1.0 / X.shape[1]
        self.gamma_ = gamma
        self.svm = OneClassSVM(kernel="rbf", nu=self.nu, gamma=gamma).fit(self.scaler.transform(X))
        return self

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise NotFittedError("boundary")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.svm.decision_function(self.scaler.transform(X))

    def is_anomalous(self, X: np.ndarray) -> np.ndarray:
        return self.decision_function(X) < 0


def fit_boundary(X: np.ndarray, nu: float = 0.05, gamma: float | None = None) -> OneClassBoundary:
    return OneClassBoundary(nu, gamma).fit(X)


@dataclass
class DetectionResult:
    user_key: str
    window_index: int
    decision_value: float
    timestamps: list[float] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "anomalous" if self.decision_value < 0 else "benign"

    @property
    def is_anomalous(self) -> bool:
        return self.decision_value < 0

    def to_record(self) -> dict:
        return {
            "user_key": self.user_key,
            "window_index": self.window_index,
            "verdict": self.verdict,
            "decision_value": self.decision_value,
            "flows": [{"tau": t, "alpha": a, "label": o}
                      for t, a, o in zip(self.timestamps, self.scores, self.labels)],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "DetectionResult":
        flows = rec.get("flows", [])
        return cls(rec["user_key"], int(rec["window_index"]), float(rec["decision_value"]),
                   [f["tau"] for f in flows], [f["alpha"] for f in flows],
                   [f["label"] for f in flows])
