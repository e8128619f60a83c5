"""Fitted pipeline state and the train / detect composition."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import os
import pickle
import platform
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import sklearn
import torch

from blade import __version__
from blade.autoencoder import FlowAutoencoder, train_autoencoder
from blade.behavior import (
    BehaviorNormalizer,
    DetectionResult,
    OneClassBoundary,
    assemble_behavior_sample,
    fit_boundary,
    fit_normalizer,
    train_extractor,
)
from blade.config import Config, config_from_dict
from blade.errors import DataError, ModelError, NotFittedError, TrainingError
from blade.ingestion import MultiFlowSample, TrainingDataset
from blade.labeling import (
    ClusterModel,
    LatentTransform,
    default_min_cluster_size,
    fit_clusters,
    fit_transform_params,
)
from blade.scoring import ChannelECDF, fit_ecdf, score_losses

logger = logging.getLogger(__name__)

BUNDLE_FORMAT = 1


@dataclass
class FlowEvidence:
    """Per-flow outputs for a batch of windows, each array shaped (windows, W, ...)."""

    timestamps: np.ndarray
    latents: np.ndarray
    losses: np.ndarray
    channel_scores: np.ndarray
    scores: np.ndarray
    labels: np.ndarray


@dataclass
class FlowStage:
    autoencoder: FlowAutoencoder
    transform: LatentTransform
    clusters: ClusterModel
    ecdfs: list[ChannelECDF]
    train_whitened: np.ndarray | None = None

    def evidence(self, windows: list[MultiFlowSample]) -> FlowEvidence:
        if not windows:
            empty = np.zeros((0, 0))
            return FlowEvidence(empty, empty, empty, empty, empty, empty)
        W = len(windows[0].flows)
        if any(len(w.flows) != W for w in windows):
            raise DataError("all windows must have the same size")
        X = np.concatenate([w.stack() for w in windows])
        Z, losses = self.autoencoder.embed(X)
        _, a, alpha = score_losses(losses, self.ecdfs)
        labels = self.clusters.predict(self.transform(Z))
        n = len(windows)
        return FlowEvidence(
            timestamps=np.stack([w.timestamps for w in windows]),
            latents=Z.reshape(n, W, -1),
            losses=losses.reshape(n, W, -1),
            channel_scores=a.reshape(n, W, -1),
            scores=alpha.reshape(n, W),
            labels=labels.reshape(n, W),
        )


@dataclass
class BehaviorStage:
    normalizer: BehaviorNormalizer
    extractor: FlowAutoencoder
    boundary: OneClassBoundary

    def matrices(self, ev: FlowEvidence) -> np.ndarray:
        return np.stack([
            assemble_behavior_sample(ev.timestamps[i], ev.scores[i], ev.labels[i], self.normalizer,
                                     raw_losses=ev.losses[i].mean(axis=1)).matrix
            for i in range(len(ev.timestamps))
        ])

    def decision(self, ev: FlowEvidence) -> np.ndarray:
        if len(ev.timestamps) == 0:
            return np.zeros(0)
        X = self.extractor.encode(self.matrices(ev))
        return self.boundary.decision_function(X)


@contextmanager
def _stage(name: str):
    """Re-raise any failure inside a training stage with the stage named."""
    try:
        yield
    except DataError as exc:
        raise DataError(f"[{name}] {exc}") from exc
    except Exception as exc:
        raise TrainingError(f"[{name}] {type(exc).__name__}: {exc}") from exc


def fit_flow_stage(train: TrainingDataset, config: Config) -> FlowStage:
    windows = train.samples
    X = np.concatenate([w.stack() for w in windows])
    with _stage("flow_autoencoder"):
        ae = train_autoencoder(X, config.flow_autoencoder)
    with _stage("pseudo_labeler"):
        Z, losses = ae.embed(X)
        lab = config.labeling
        t = fit_transform_params(Z, lab.variance_threshold, lab.variance_target)
        Zw = t(Z)
        mcs = lab.min_cluster_size or default_min_cluster_size(len(Zw))
        clusters = fit_clusters(Zw, mcs, lab.min_samples)
    with _stage("anomaly_scorer"):
        ecdfs = fit_ecdf(losses, config.scoring.epsilon, config.scoring.delta)
    return FlowStage(ae, t, clusters, ecdfs, Zw)


def fit_behavior_stage(flow: FlowStage, train: TrainingDataset, config: Config,
                       variant: int | None = None) -> BehaviorStage:
    variant = config.behavior.variant if variant is None else variant
    with _stage("behavior_detector"):
        ev = flow.evidence(train.samples)
        norm = fit_normalizer(ev.timestamps, flow.clusters.n_clusters, config.scoring.delta, variant)
        partial = BehaviorStage(norm, None, None)
        S = partial.matrices(ev)
        extractor = train_extractor(S, config.behavior.extractor)
        boundary = fit_boundary(extractor.encode(S), config.behavior.nu, config.behavior.gamma)
    return BehaviorStage(norm, extractor, boundary)


@dataclass
class ModelBundle:
    config: Config
    flow: FlowStage
    behavior: BehaviorStage
    reports: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.config.data.channels)

    @property
    def L(self) -> int:
        return self.config.data.L

    @property
    def W(self) -> int:
        return self.config.data.W

    def check_compatible(self, N: int, L: int, W: int) -> None:
        if (N, L, W) != (self.N, self.L, self.W):
            raise ModelError(f"bundle expects N={self.N}, L={self.L}, W={self.W}; "
                             f"data/config has N={N}, L={L}, W={W}")

    def evidence(self, windows: list[MultiFlowSample]) -> FlowEvidence:
        for w in windows:
            if len(w.flows) != self.W:
                raise ModelError(f"window has {len(w.flows)} flows, bundle W={self.W}")
        return self.flow.evidence(windows)

    def detect(self, windows: list[MultiFlowSample]) -> list[DetectionResult]:
        if not windows:
            return []
        ev = self.evidence(windows)
        values = self.behavior.decision(ev)
        return [
            DetectionResult(w.user_key, w.window_index, float(values[i]),
                            ev.timestamps[i].tolist(), ev.scores[i].tolist(),
                            [int(x) for x in ev.labels[i]])
            for i, w in enumerate(windows)
        ]

    # ---------------------------------------------------------------- persistence

    def save(self, path: str | Path) -> Path:
        """Write the bundle directory atomically (staged, then renamed)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=".bundle-", dir=path.parent))
        try:
            artifacts = _write_artifacts(self, tmp)
            manifest = {
                "format": BUNDLE_FORMAT,
                "blade_version": __version__,
                "versions": {"python": platform.python_version(), "numpy": np.__version__,
                             "torch": torch.__version__, "scikit-learn": sklearn.__version__},
                "seed": self.config.seed,
                "prng": {"split": "numpy.random.PCG64", "weights": "torch.manual_seed"},
                "log_base": "e",
                "config": self.config.to_dict(),
                "channel_normalization": {"mean": self.flow.autoencoder.mean.tolist(),
                                          "std": self.flow.autoencoder.std.tolist()},
                "behavior_normalization": self.behavior.normalizer.to_dict(),
                "artifacts": artifacts,
                "hash": _combined_hash(artifacts),
            }
            (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
            if path.exists():
                shutil.rmtree(path)
            os.replace(tmp, path)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        self.manifest = manifest
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ModelBundle":
        path = Path(path)
        try:
            manifest = json.loads((path / "manifest.json").read_text())
        except FileNotFoundError as exc:
            raise ModelError(f"no bundle at {path}") from exc
        except json.JSONDecodeError as exc:
            raise ModelError(f"corrupt bundle manifest: {exc}") from exc
        if manifest.get("format") != BUNDLE_FORMAT:
            raise ModelError(f"unsupported bundle format {manifest.get('format')}")
        for name, digest in manifest["artifacts"].items():
            f = path / name
            if not f.exists() or _sha256(f.read_bytes()) != digest:
                raise ModelError(f"bundle artifact {name} is missing or does not match the manifest")
        config = config_from_dict(manifest["config"])
        arrays = {p.stem: np.load(p, allow_pickle=False) for p in sorted((path / "arrays").glob("*.npy"))}
        ae = FlowAutoencoder.from_state(torch.load(path / "flow_autoencoder.pt", weights_only=False))
        extractor = FlowAutoencoder.from_state(torch.load(path / "extractor.pt", weights_only=False))
        transform = LatentTransform.from_arrays({k[len("transform."):]: v for k, v in arrays.items()
                                                 if k.startswith("transform.")})
        n_ch = len(config.data.channels)
        sc = config.scoring
        ecdfs = [ChannelECDF(arrays[f"ecdf.{n}"], sc.epsilon, sc.delta) for n in range(n_ch)]
        with open(path / "cluster_model.pkl", "rb") as fh:
            clusters = pickle.load(fh)
        with open(path / "boundary.pkl", "rb") as fh:
            boundary = pickle.load(fh)
        norm = BehaviorNormalizer(**manifest["behavior_normalization"])
        reports = {}
        for p in sorted((path / "reports").glob("*.json")):
            reports[p.stem] = json.loads(p.read_text())
        return cls(config, FlowStage(ae, transform, clusters, ecdfs),
                   BehaviorStage(norm, extractor, boundary), reports, manifest)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _combined_hash(artifacts: dict[str, str]) -> str:
    h = hashlib.sha256()
    for name in sorted(artifacts):
        h.update(name.encode())
        h.update(artifacts[name].encode())
    return h.hexdigest()


def _write_artifacts(bundle: ModelBundle, root: Path) -> dict[str, str]:
    files: dict[str, bytes] = {}

    def put_torch(name, obj):
        buf = io.BytesIO()
        torch.save(obj, buf)
        files[name] = buf.getvalue()

    def put_array(name, arr):
        buf = io.BytesIO()
        np.save(buf, np.asarray(arr), allow_pickle=False)
        files[f"arrays/{name}.npy"] = buf.getvalue()

    put_torch("flow_autoencoder.pt", bundle.flow.autoencoder.state())
    put_torch("extractor.pt", bundle.behavior.extractor.state())
    for k, v in bundle.flow.transform.arrays().items():
        put_array(f"transform.{k}", v)
    for n, ecdf in enumerate(bundle.flow.ecdfs):
        put_array(f"ecdf.{n}", ecdf.sorted_log_losses)
    files["cluster_model.pkl"] = pickle.dumps(bundle.flow.clusters, protocol=4)
    files["boundary.pkl"] = pickle.dumps(bundle.behavior.boundary, protocol=4)
    for name, rep in bundle.reports.items():
        files[f"reports/{name}.json"] = (json.dumps(rep, indent=2, sort_keys=True) + "\n").encode()
    for name, data in files.items():
        target = root / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    return {name: _sha256(data) for name, data in files.items()}


def fit_bundle(train: TrainingDataset, config: Config, flow: FlowStage | None = None) -> ModelBundle:
    """Train every stage on benign windows. ``flow`` reuses an already fitted flow stage."""
    config.validate()
    if flow is None:
        flow = fit_flow_stage(train, config)
    behavior = fit_behavior_stage(flow, train, config)
    reports = {
        "cluster_summary": flow.clusters.summary(),
        "training_curves": {"flow_autoencoder": flow.autoencoder.curve.epoch_loss,
                            "extractor": behavior.extractor.curve.epoch_loss},
        "latent_transform": {"kept_dims": flow.transform.kept_dims,
                             "component_count": flow.transform.component_count,
                             "explained_variance": flow.transform.explained_ratio},
    }
    return ModelBundle(config, flow, behavior, reports)


def with_variant(config: Config, variant: int) -> Config:
    cfg = dataclasses.replace(config, behavior=dataclasses.replace(config.behavior, variant=variant))
    cfg.validate()
    return cfg


__all__ = ["FlowEvidence", "FlowStage", "BehaviorStage", "ModelBundle", "fit_bundle",
           "fit_flow_stage", "fit_behavior_stage", "with_variant", "NotFittedError"]
