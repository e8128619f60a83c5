"""Flow-record parsing, fixed-length feature sequences and per-user windowing.

Record file layout (CSV with header, or one JSON object per line for
``.jsonl``)::

    user_key,first_seen,packet_sizes,inter_arrival,tcp_flags,label
    10.0.0.7,12.5,60;1500;60,0;0.01;0.02,2;24;17,benign

List-valued columns are ``;``-joined in CSV and JSON arrays in JSONL. Labels
are ``benign`` or ``attack:<vector>``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from blade.config import CHANNELS
from blade.errors import ConfigError, DataError, RecordError, SchemaError

logger = logging.getLogger(__name__)

COLUMNS = ("user_key", "first_seen", "packet_sizes", "inter_arrival", "tcp_flags", "label")
BENIGN = "benign"


def is_benign(label: str) -> bool:
    return label == BENIGN


def attack_name(label: str) -> str | None:
    """``"attack:dos"`` -> ``"dos"``; ``None`` for benign labels."""
    if is_benign(label):
        return None
    return label.split(":", 1)[1]


@dataclass(frozen=True)
class FlowRecord:
    user_key: str
    first_seen: float
    packet_sizes: tuple[int, ...]
    inter_arrival: tuple[float, ...]
    tcp_flags: tuple[int, ...]
    label: str = BENIGN

    def __post_init__(self):
        n = len(self.packet_sizes)
        if n < 1:
            raise ValueError("flow has no packets")
        if len(self.inter_arrival) != n or len(self.tcp_flags) != n:
            raise ValueError("attribute lists differ in length")
        if not math.isfinite(self.first_seen) or self.first_seen < 0:
            raise ValueError(f"first_seen must be finite and >= 0, got {self.first_seen}")
        if self.inter_arrival[0] != 0:
            raise ValueError("inter_arrival[0] must be 0")
        if any(s < 0 for s in self.packet_sizes):
            raise ValueError("packet sizes must be non-negative")
        if any(not math.isfinite(t) or t < 0 for t in self.inter_arrival):
            raise ValueError("inter-arrival times must be finite and >= 0")
        if any(not 0 <= f <= 255 for f in self.tcp_flags):
            raise ValueError("tcp flags must be a byte bitmask (0-255)")
        if not (self.label == BENIGN or (self.label.startswith("attack:") and len(self.label) > 7)):
            raise ValueError(f"label must be 'benign' or 'attack:<name>', got {self.label!r}")

    @property
    def packet_count(self) -> int:
        return len(self.packet_sizes)

    def channel(self, name: str) -> tuple:
        return getattr(self, name)


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """N x L matrix for one flow, with its first-seen timestamp."""

    matrix: np.ndarray
    timestamp: float
    label: str = BENIGN
    user_key: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


@dataclass(eq=False)
class MultiFlowSample:
    flows: list[FeatureSequence]
    user_key: str
    window_index: int = 0

    def __post_init__(self):
        ts = self.timestamps
        if np.any(np.diff(ts) < 0):
            raise DataError("window timestamps must be non-decreasing")
        if any(f.user_key != self.user_key for f in self.flows):
            raise DataError("window mixes flows of different users")

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.flows], dtype=np.float64)

    @property
    def labels(self) -> list[str]:
        return [f.label for f in self.flows]

    @property
    def label(self) -> str:
        """``benign`` iff all member flows are benign, else the most common attack label."""
        attacks = [lab for lab in self.labels if not is_benign(lab)]
        if not attacks:
            return BENIGN
        return max(set(attacks), key=attacks.count)

    @property
    def is_benign(self) -> bool:
        return all(is_benign(lab) for lab in self.labels)

    def stack(self) -> np.ndarray:
        """Feature matrices as one (W, N, L) array."""
        return np.stack([f.matrix for f in self.flows])


@dataclass
class TrainingDataset:
    samples: list[MultiFlowSample] = field(default_factory=list)

    def __post_init__(self):
        if not self.samples:
            raise DataError("training dataset is empty")
        for s in self.samples:
            if not s.is_benign:
                raise DataError(
                    f"training window {s.user_key}#{s.window_index} contains attack-labelled flows"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def flows(self) -> list[FeatureSequence]:
        return [f for s in self.samples for f in s.flows]


# --------------------------------------------------------------------------- parsing


def _parse_list(value, cast, row: int, column: str) -> tuple:
    if isinstance(value, list):
        items = value
    elif isinstance(value, str):
        text = value.strip()
        if not text:
            raise RecordError(row, f"empty packet list in '{column}'")
        items = text.split(";")
    else:
        raise RecordError(row, f"'{column}' must be a list or a ';'-joined string")
    try:
        out = []
        for item in items:
            if cast is int:
                f = float(item)
                if not f.is_integer():
                    raise ValueError(item)
                out.append(int(f))
            else:
                out.append(float(item))
    except (TypeError, ValueError):
        raise RecordError(row, f"non-numeric value in '{column}'") from None
    if not out:
        raise RecordError(row, f"empty packet list in '{column}'")
    return tuple(out)


def _record_from_mapping(raw: dict, row: int) -> FlowRecord:
    try:
        first_seen = float(raw["first_seen"])
    except (TypeError, ValueError):
        raise RecordError(row, "first_seen is not numeric") from None
    sizes = _parse_list(raw["packet_sizes"], int, row, "packet_sizes")
    iat = _parse_list(raw["inter_arrival"], float, row, "inter_arrival")
    flags = _parse_list(raw["tcp_flags"], int, row, "tcp_flags")
    try:
        return FlowRecord(
            user_key=str(raw["user_key"]),
            first_seen=first_seen,
            packet_sizes=sizes,
            inter_arrival=iat,
            tcp_flags=flags,
            label=str(raw["label"]),
        )
    except ValueError as exc:
        raise RecordError(row, str(exc)) from None


def _iter_rows(path: Path):
    if path.suffix in (".jsonl", ".ndjson"):
        with path.open() as fh:
            for i, line in enumerate(fh):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError:
                    raise RecordError(i, "line is not valid JSON") from None
                if not isinstance(obj, dict):
                    raise RecordError(i, "line is not a JSON object")
                missing = [c for c in COLUMNS if c not in obj]
                if missing:
                    raise SchemaError(f"{path}: record {i} lacks column(s) {missing}")
                yield i, obj
    else:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise SchemaError(f"{path}: file is empty")
            missing = [c for c in COLUMNS if c not in reader.fieldnames]
            if missing:
                raise SchemaError(f"{path}: missing required column(s) {missing}")
            for i, obj in enumerate(reader):
                if None in obj or any(obj[c] is None for c in COLUMNS):
                    raise RecordError(i, "wrong number of fields")
                yield i, obj


def parse_flow_records(path: str | Path) -> list[FlowRecord]:
    """Read every row of a flow-record file.

    Raises:
        SchemaError: the file is missing or lacks a required column.
        RecordError: a row is malformed; ``.row`` names it.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"flow-record file not found: {path}")
    records = [_record_from_mapping(obj, i) for i, obj in _iter_rows(path)]
    logger.info("parsed %d flow records from %s", len(records), path)
    return records


def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_flow_records(records: Iterable[FlowRecord], path: str | Path) -> None:
    """Write records in the format read by :func:`parse_flow_records`.

    Floats are written with ``repr`` so a re-parse is field-identical.
    """
    path = Path(path)
    if path.suffix in (".jsonl", ".ndjson"):
        with path.open("w") as fh:
            for r in records:
                fh.write(json.dumps({
                    "user_key": r.user_key,
                    "first_seen": r.first_seen,
                    "packet_sizes": list(r.packet_sizes),
                    "inter_arrival": list(r.inter_arrival),
                    "tcp_flags": list(r.tcp_flags),
                    "label": r.label,
                }) + "\n")
        return
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for r in records:
            writer.writerow([
                r.user_key,
                _fmt_float(r.first_seen),
                ";".join(str(s) for s in r.packet_sizes),
                ";".join(_fmt_float(t) for t in r.inter_arrival),
                ";".join(str(f) for f in r.tcp_flags),
                r.label,
            ])


# --------------------------------------------------------------------------- features


def build_feature_sequence(
    flow: FlowRecord, L: int, channels: Sequence[str] = CHANNELS
) -> FeatureSequence:
    """Truncate or zero-pad each attribute channel of ``flow`` to length ``L``."""
    if L < 1:
        raise ConfigError(f"L must be >= 1, got {L}")
    matrix = np.zeros((len(channels), L), dtype=np.float64)
    for n, name in enumerate(channels):
        if name not in CHANNELS:
            raise ConfigError(f"unsupported channel {name!r}")
        values = flow.channel(name)[:L]
        matrix[n, : len(values)] = values
    return FeatureSequence(matrix=matrix, timestamp=flow.first_seen, label=flow.label,
                           user_key=flow.user_key)


def group_key(user_key: str, group_by: str = "key") -> str:
    if group_by == "key":
        return user_key
    if group_by == "ip":
        return user_key.rsplit(":", 1)[0] if user_key.count(":") == 1 else user_key
    raise ConfigError(f"unknown group_by {group_by!r}")


def extract_multiflow_samples(
    flows: Iterable[FeatureSequence], W: int, group_by: str = "key"
) -> list[MultiFlowSample]:
    """Cut each user's time-ordered flows into non-overlapping windows of ``W``.

    A trailing remainder of fewer than ``W`` flows is dropped. Users are
    emitted in first-appearance order, windows in time order.
    """
    if W < 1:
        raise ConfigError(f"W must be >= 1, got {W}")
    by_user: dict[str, list[FeatureSequence]] = defaultdict(list)
    for f in flows:
        by_user[group_key(f.user_key, group_by)].append(f)
    samples = []
    dropped = 0
    for user, seq in by_user.items():
        # stable sort keeps file order for equal timestamps
        seq = sorted(seq, key=lambda f: f.timestamp)
        if group_by != "key":
            seq = [FeatureSequence(f.matrix, f.timestamp, f.label, user) for f in seq]
        full = len(seq) // W
        dropped += len(seq) - full * W
        for w in range(full):
            samples.append(MultiFlowSample(flows=seq[w * W:(w + 1) * W], user_key=user,
                                           window_index=w))
    logger.debug("built %d windows, dropped %d trailing flows", len(samples), dropped)
    return samples


def count_dropped(flows: Iterable[FeatureSequence], W: int, group_by: str = "key") -> int:
    counts: dict[str, int] = defaultdict(int)
    for f in flows:
        counts[group_key(f.user_key, group_by)] += 1
    return sum(c % W for c in counts.values())


def split_train_test(
    samples: Sequence[MultiFlowSample], ratio: float = 0.7, seed: int = 0
) -> tuple[TrainingDataset, list[MultiFlowSample]]:
    """Seeded split of benign windows; every malicious window goes to the test set.

    The training share is ``floor(ratio * n_benign)`` (at least one window).
    """
    if not 0 < ratio < 1:
        raise ConfigError(f"ratio must lie in (0, 1), got {ratio}")
    benign = [s for s in samples if s.is_benign]
    malicious = [s for s in samples if not s.is_benign]
    if not benign:
        raise DataError("no benign windows to train on")
    order = np.random.default_rng(seed).permutation(len(benign))
    n_train = max(1, int(math.floor(ratio * len(benign))))
    train = [benign[i] for i in sorted(order[:n_train])]
    test = [benign[i] for i in sorted(order[n_train:])] + malicious
    return TrainingDataset(train), test
