"""Pseudo operation labels: latent filtering, PCA whitening, HDBSCAN.

Variances and covariances are population estimates (``ddof=0``) throughout,
so whitened training latents have exactly unit covariance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import hdbscan
import numpy as np
from scipy.spatial import cKDTree

from blade.errors import DataError, ModelError, NotFittedError

logger = logging.getLogger(__name__)

NOISE = -1


@dataclass
class LatentTransform:
    variance_mask: np.ndarray
    mean_vector: np.ndarray
    whitening_matrix: np.ndarray
    explained_variance: np.ndarray
    explained_ratio: float
    variance_threshold: float = 0.01
    variance_target: float = 0.95

    @property
    def kept_dims(self) -> int:
        return int(self.variance_mask.sum())

    @property
    def component_count(self) -> int:
        return self.whitening_matrix.shape[1]

    def __call__(self, Z: np.ndarray) -> np.ndarray:
        return transform(Z, self)

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "variance_mask": self.variance_mask,
            "mean_vector": self.mean_vector,
            "whitening_matrix": self.whitening_matrix,
            "explained_variance": self.explained_variance,
            "params": np.array([self.explained_ratio, self.variance_threshold, self.variance_target]),
        }

    @classmethod
    def from_arrays(cls, a: dict[str, np.ndarray]) -> "LatentTransform":
        ratio, theta, target = (float(v) for v in a["params"])
        return cls(np.asarray(a["variance_mask"], dtype=bool), a["mean_vector"],
                   a["whitening_matrix"], a["explained_variance"], ratio, theta, target)


def fit_transform_params(Z: np.ndarray, variance_threshold: float = 0.01,
                         variance_target: float = 0.95) -> LatentTransform:
    """Low-variance filter followed by PCA whitening.

    Dimensions with variance ``<= variance_threshold`` are dropped; the
    fewest leading components whose cumulative explained variance reaches
    ``variance_target`` are kept and scaled to unit variance.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or len(Z) < 2:
        raise DataError("need at least 2 latent vectors")
    var = Z.var(axis=0)
    mask = var > variance_threshold
    if not mask.any():
        raise ModelError(
            f"every latent dimension has variance <= {variance_threshold}; lower variance_threshold"
        )
    Zk = Z[:, mask]
    mean = Zk.mean(axis=0)
    C = (Zk - mean).T @ (Zk - mean) / len(Zk)
    eigvals, eigvecs = np.linalg.eigh(C)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    # deterministic sign: largest-magnitude loading positive
    flip = np.sign(eigvecs[np.argmax(np.abs(eigvecs), axis=0), np.arange(eigvecs.shape[1])])
    eigvecs = eigvecs * np.where(flip == 0, 1.0, flip)
    ratios = np.cumsum(eigvals) / eigvals.sum()
    # tolerance absorbs round-off when the target is hit exactly
    k = int(np.searchsorted(ratios, variance_target - 1e-12) + 1)
    k = min(k, len(eigvals))
    kept = eigvals[:k]
    if np.any(kept <= 0):
        raise ModelError("retained principal components have zero variance")
    W = eigvecs[:, :k] / np.sqrt(kept)
    logger.info("latent transform: %d/%d dims kept, %d components (%.3f variance)",
                int(mask.sum()), Z.shape[1], k, ratios[k - 1])
    return LatentTransform(mask, mean, W, kept, float(ratios[k - 1]), variance_threshold,
                           variance_target)


def transform(Z: np.ndarray, t: LatentTransform) -> np.ndarray:
    """Mask, centre, project, scale. Accepts one vector or a 2-D stack."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[-1] != len(t.variance_mask):
        raise DataError(f"latent length {Z.shape[-1]} != fitted {len(t.variance_mask)}")
    return (Z[..., t.variance_mask] - t.mean_vector) @ t.whitening_matrix


def default_min_cluster_size(n_flows: int) -> int:
    return max(15, int(round(0.005 * n_flows)))


class ClusterModel:
    """HDBSCAN partition of whitened training latents.

    Out-of-sample points are labelled with HDBSCAN's approximate-membership
    prediction; points that coincide with a training point keep its label.
    """

    assignment_rule = "exact training member -> fitted label; otherwise hdbscan.approximate_predict"

    def __init__(self, min_cluster_size: int, min_samples: int | None = None):
        self.min_cluster_size = min_cluster_size
        self.min_samples = min_samples
        self.labels_: np.ndarray | None = None
        self._hdb: hdbscan.HDBSCAN | None = None
        self._train: np.ndarray | None = None
        self._tree: cKDTree | None = None
        self.degenerate = False

    @property
    def fitted(self) -> bool:
        return self.labels_ is not None

    @property
    def cluster_ids(self) -> list[int]:
        if not self.fitted:
            raise NotFittedError("clusters")
        return sorted(int(c) for c in set(self.labels_.tolist()) if c != NOISE)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_ids)

    def fit(self, X: np.ndarray) -> "ClusterModel":
        X = np.asarray(X, dtype=np.float64)
        if len(X) < self.min_cluster_size:
            raise DataError(f"{len(X)} points < min_cluster_size {self.min_cluster_size}")
        self._train = X.copy()
        self._tree = cKDTree(X)
        if np.all(np.ptp(X, axis=0) == 0):
            self.degenerate = True
            self.labels_ = np.zeros(len(X), dtype=int)
            logger.warning("all clustering inputs identical; using a single cluster")
            return self
        self._hdb = hdbscan.HDBSCAN(min_cluster_size=self.min_cluster_size,
                                    min_samples=self.min_samples, prediction_data=True)
        self.labels_ = self._hdb.fit_predict(X).astype(int)
        logger.info("hdbscan: %d clusters, %.1f%% noise", self.n_clusters,
                    100 * np.mean(self.labels_ == NOISE))
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise NotFittedError("clusters")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self._train.shape[1]:
            raise DataError(f"point dimension {X.shape[1]} != fitted {self._train.shape[1]}")
        dist, idx = self._tree.query(X, k=1)
        exact = dist == 0
        out = np.full(len(X), NOISE, dtype=int)
        out[exact] = self.labels_[idx[exact]]
        rest = ~exact
        if rest.any() and not self.degenerate:
            labels, _ = hdbscan.approximate_predict(self._hdb, X[rest])
            out[rest] = labels
        return out

    def summary(self) -> dict:
        labels = self.labels_
        sizes = {int(c): int(np.sum(labels == c)) for c in self.cluster_ids}
        persistence = []
        if self._hdb is not None:
            persistence = [float(p) for p in self._hdb.cluster_persistence_]
        return {
            "n_clusters": self.n_clusters,
            "sizes": sizes,
            "noise": int(np.sum(labels == NOISE)),
            "persistence": persistence,
            "min_cluster_size": self.min_cluster_size,
            "assignment_rule": self.assignment_rule,
        }


def fit_clusters(X: np.ndarray, min_cluster_size: int, min_samples: int | None = None) -> ClusterModel:
    return ClusterModel(min_cluster_size, min_samples).fit(X)


def assign_label(z_w: np.ndarray, model: ClusterModel) -> int:
    return int(model.predict(np.atleast_2d(z_w))[0])
