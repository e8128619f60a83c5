"""Detection and clustering metrics.

Per-attack scores are computed on that attack's windows together with every
benign test window, so benign false positives count against each vector.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.metrics import calinski_harabasz_score, davies_bouldin_score, silhouette_score

from blade.errors import DataError
from blade.ingestion import attack_name, is_benign


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def false_positive_rate(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else 0.0

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def confusion(y_true, y_pred) -> Confusion:
    """``y_true`` / ``y_pred``: truthy = malicious / flagged."""
    t = np.asarray(y_true, dtype=bool)
    p = np.asarray(y_pred, dtype=bool)
    return Confusion(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(t & ~p)), int(np.sum(~t & ~p)))


def clustering_metrics(X: np.ndarray, labels: np.ndarray, sample_size: int | None = 5000,
                       seed: int = 0) -> dict:
    """Silhouette, Calinski-Harabasz and Davies-Bouldin on non-noise points.

    Silhouette is subsampled to ``sample_size`` points (seeded) when larger.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    keep = labels >= 0
    X, labels = X[keep], labels[keep]
    if len(set(labels.tolist())) < 2:
        return {"silhouette": None, "calinski_harabasz": None, "davies_bouldin": None,
                "points": int(len(X))}
    size = sample_size if sample_size is not None and len(X) > sample_size else None
    return {
        "silhouette": float(silhouette_score(X, labels, sample_size=size, random_state=seed)),
        "calinski_harabasz": float(calinski_harabasz_score(X, labels)),
        "davies_bouldin": float(davies_bouldin_score(X, labels)),
        "points": int(len(X)),
    }


@dataclass
class EvalReport:
    overall: dict
    per_attack: dict[str, dict]
    average: dict
    benign_false_positive_rate: float
    counts: dict
    clustering: dict | None = None
    variant: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_windows(window_labels: list[str], flagged: list[bool], clustering: dict | None = None,
                     variant: int = 0) -> EvalReport:
    """Score window verdicts against their ground-truth labels.

    ``average`` is the unweighted mean of per-attack precision, recall and F1.
    """
    if not window_labels:
        raise DataError("empty test set")
    if len(window_labels) != len(flagged):
        raise DataError("labels and predictions differ in length")
    truth = np.array([not is_benign(lab) for lab in window_labels])
    pred = np.asarray(flagged, dtype=bool)
    overall = confusion(truth, pred)
    benign = ~truth
    per_attack = {}
    for name in sorted({attack_name(lab) for lab in window_labels if not is_benign(lab)}):
        mine = np.array([attack_name(lab) == name for lab in window_labels])
        sel = mine | benign
        per_attack[name] = confusion(truth[sel], pred[sel]).as_dict()
    if per_attack:
        average = {k: float(np.mean([v[k] for v in per_attack.values()]))
                   for k in ("precision", "recall", "f1")}
    else:
        average = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    counts = {"windows": overall.total, "benign": int(benign.sum()), "malicious": int(truth.sum())}
    return EvalReport(overall.as_dict(), per_attack, average, overall.false_positive_rate,
                      counts, clustering, variant)
