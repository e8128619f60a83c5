"""End-to-end workflows shared by the CLI and the test-suite."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from blade.config import Config
from blade.errors import DataError
from blade.ingestion import (
    FlowRecord,
    MultiFlowSample,
    TrainingDataset,
    build_feature_sequence,
    count_dropped,
    extract_multiflow_samples,
    split_train_test,
)
from blade.labeling import NOISE
from blade.metrics import EvalReport, clustering_metrics, evaluate_windows
from blade.model import FlowStage, ModelBundle, fit_bundle, fit_flow_stage, with_variant

logger = logging.getLogger(__name__)


def build_windows(records: list[FlowRecord], config: Config) -> tuple[list[MultiFlowSample], int]:
    """Feature sequences and windows for ``records``; returns (windows, dropped flow count)."""
    d = config.data
    seqs = [build_feature_sequence(r, d.L, d.channels) for r in records]
    return extract_multiflow_samples(seqs, d.W, d.group_by), count_dropped(seqs, d.W, d.group_by)


def prepare(records: list[FlowRecord], config: Config) -> tuple[TrainingDataset, list[MultiFlowSample]]:
    windows, dropped = build_windows(records, config)
    if dropped:
        logger.info("dropped %d trailing flows that do not fill a window", dropped)
    return split_train_test(windows, config.data.split_ratio, config.seed)


def train_clustering_metrics(flow: FlowStage, seed: int = 0) -> dict:
    if flow.train_whitened is None:
        return {}
    return clustering_metrics(flow.train_whitened, flow.clusters.labels_, seed=seed)


def train(records: list[FlowRecord], config: Config) -> tuple[ModelBundle, TrainingDataset,
                                                              list[MultiFlowSample]]:
    """Split, then train a bundle on the benign training windows."""
    train_set, test = prepare(records, config)
    t0 = time.perf_counter()
    bundle = fit_bundle(train_set, config)
    bundle.reports["clustering_metrics"] = train_clustering_metrics(bundle.flow, config.seed)
    bundle.reports["training"] = {"train_windows": len(train_set), "test_windows": len(test),
                                  "seconds": round(time.perf_counter() - t0, 3)}
    return bundle, train_set, test


def evaluate(bundle: ModelBundle, windows: list[MultiFlowSample]) -> EvalReport:
    results = bundle.detect(windows)
    report = evaluate_windows([w.label for w in windows], [r.is_anomalous for r in results],
                              bundle.reports.get("clustering_metrics"),
                              bundle.config.behavior.variant)
    return report


@dataclass
class AblationRun:
    reports: dict[int, EvalReport] = field(default_factory=dict)
    bundles: dict[int, ModelBundle] = field(default_factory=dict)


def ablate(train_set: TrainingDataset, test: list[MultiFlowSample], config: Config,
           variants=(0, 1, 2, 3), flow: FlowStage | None = None) -> AblationRun:
    """Evaluate each behavior-stage variant on one shared, identically seeded flow stage."""
    if not test:
        raise DataError("empty test set")
    if flow is None:
        flow = fit_flow_stage(train_set, config)
    run = AblationRun()
    metrics = train_clustering_metrics(flow, config.seed)
    for v in variants:
        bundle = fit_bundle(train_set, with_variant(config, v), flow=flow)
        bundle.reports["clustering_metrics"] = metrics
        run.bundles[v] = bundle
        run.reports[v] = evaluate(bundle, test)
        logger.info("variant %d: F1 %.4f", v, run.reports[v].overall["f1"])
    return run


def single_flow_scores(bundle: ModelBundle, windows: list[MultiFlowSample]) -> np.ndarray:
    """Flow anomaly scores, shape (windows, W)."""
    return bundle.evidence(windows).scores


def noise_rate(bundle: ModelBundle) -> float:
    return float(np.mean(bundle.flow.clusters.labels_ == NOISE))
