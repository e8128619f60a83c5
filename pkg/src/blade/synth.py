"""Deterministic synthetic web-service traffic.

Benign users walk a Markov chain over a small set of web operations; each
operation emits one TCP flow drawn from its own packet-level profile. Attack
traffic comes in two families:

* flow-level vectors (``dos``, ``scan``, ``injection``, ``brute_force``) whose
  individual flows fall outside every benign profile, and
* behavior-level vectors (``harvesting``, ``bulk_bot``, ``active_session``)
  built only from in-profile flows; the malice is in operation order and
  timing across a window.

Everything is driven by ``numpy.random.Generator(PCG64)`` seeded from the
scenario seed, one independent stream per traffic family.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from blade.errors import ConfigError
from blade.ingestion import BENIGN, FlowRecord

logger = logging.getLogger(__name__)

PRNG = "numpy.random.PCG64"

SYN, ACK, PSH_ACK, FIN_ACK = 0x02, 0x10, 0x18, 0x11
MIN_SIZE, MAX_SIZE = 52, 1500
# processing floor added to every benign inter-arrival gap (seconds)
IAT_FLOOR = 1e-4

FLOW_ATTACKS = ("dos", "scan", "injection", "brute_force")
BEHAVIOR_ATTACKS = ("harvesting", "bulk_bot", "active_session")
ATTACKS = FLOW_ATTACKS + BEHAVIOR_ATTACKS

_STREAMS = {"benign": 0, **{name: i + 1 for i, name in enumerate(ATTACKS)}}


@dataclass(frozen=True)
class OperationProfile:
    """Packet-level generating distribution of one web operation.

    Packet count is uniform on ``packet_count``; data-packet sizes are
    log-normal (``size_median``, ``size_sigma``) clipped to the Ethernet MTU;
    inter-arrival gaps are ``IAT_FLOOR + Exp(iat_scale)``. The flag template
    is SYN, then ACK / PSH-ACK (pure ACK with probability ``ack_prob``), then
    FIN-ACK.
    """

    op_id: int
    name: str
    packet_count: tuple[int, int]
    size_median: float
    size_sigma: float
    iat_scale: float
    ack_prob: float

    def __post_init__(self):
        lo, hi = self.packet_count
        if not 3 <= lo <= hi:
            raise ConfigError(f"profile {self.op_id}: packet_count must satisfy 3 <= lo <= hi")
        if self.size_median <= 0 or self.size_sigma <= 0 or self.iat_scale <= 0:
            raise ConfigError(f"profile {self.op_id}: distribution parameters must be positive")
        if not 0 <= self.ack_prob < 1:
            raise ConfigError(f"profile {self.op_id}: ack_prob must lie in [0, 1)")

    def sample(self, rng: np.random.Generator, dispersion: float = 1.0):
        """Draw one flow's (sizes, inter-arrivals, flags).

        ``dispersion`` < 1 shrinks every draw toward the profile centre
        (scripted clients); the result stays inside the benign support.
        """
        lo, hi = self.packet_count
        centre, half = (lo + hi) / 2, (hi - lo) / 2
        n = int(np.clip(round(centre + dispersion * half * rng.uniform(-1, 1)), lo, hi))
        middle = n - 2
        is_ack = rng.random(middle) < self.ack_prob
        log_sizes = np.log(self.size_median) + dispersion * self.size_sigma * rng.standard_normal(middle)
        data = np.clip(np.rint(np.exp(log_sizes)), MIN_SIZE, MAX_SIZE).astype(int)
        acks = rng.integers(52, 67, size=middle)
        sizes = [int(rng.choice((60, 66, 74)))]
        sizes += np.where(is_ack, acks, data).tolist()
        sizes.append(int(rng.integers(52, 61)))
        flags = [SYN] + np.where(is_ack, ACK, PSH_ACK).tolist() + [FIN_ACK]
        e = rng.exponential(1.0, size=n - 1)
        iat = IAT_FLOOR + self.iat_scale * (1 - dispersion + dispersion * e)
        return sizes, [0.0] + iat.tolist(), flags


_DEFAULT_PROFILES = (
    # name, packet-count range, size median, sigma, iat scale, ack prob
    ("login", (4, 8), 320.0, 0.25, 0.020, 0.30),
    ("dashboard", (12, 16), 950.0, 0.20, 0.006, 0.25),
    ("read", (20, 24), 1350.0, 0.08, 0.004, 0.40),
    ("browse", (28, 32), 600.0, 0.20, 0.008, 0.30),
    ("post", (36, 40), 1150.0, 0.15, 0.012, 0.20),
    ("admin", (44, 48), 220.0, 0.25, 0.015, 0.45),
)


def default_profiles(num_operations: int = 6) -> list[OperationProfile]:
    """Six hand-set profiles; other counts get evenly spaced generated ones.

    Op 0 is always the login operation and the last op the privileged one.
    """
    if num_operations < 4:
        raise ConfigError("num_operations must be >= 4 (login, read, ..., privileged)")
    if num_operations == len(_DEFAULT_PROFILES):
        return [OperationProfile(i, *p) for i, p in enumerate(_DEFAULT_PROFILES)]
    step = max(1, 44 // num_operations)
    profiles = []
    for i in range(num_operations):
        lo = 4 + i * step
        frac = i / (num_operations - 1)
        name = "login" if i == 0 else "admin" if i == num_operations - 1 else f"op{i}"
        profiles.append(OperationProfile(
            op_id=i, name=name, packet_count=(lo, lo + max(1, step // 2)),
            size_median=float(200 * 7 ** ((i * 3 % num_operations) / (num_operations - 1))),
            size_sigma=0.2, iat_scale=0.004 + 0.016 * frac, ack_prob=0.3,
        ))
    return profiles


def default_transitions(num_operations: int = 6) -> np.ndarray:
    """Benign operation transition matrix.

    The privileged (last) op is entered only right after login and never
    repeats; sessions otherwise wander the ordinary ops.
    """
    k = num_operations
    priv = k - 1
    P = np.zeros((k, k))
    ordinary = list(range(1, priv))
    P[0, 1] = 0.6
    P[0, priv] = 0.25
    rest = [j for j in ordinary if j != 1] or [1]
    P[0, rest] += 0.15 / len(rest)
    for i in ordinary:
        P[i, 0] = 0.1
        P[i, i] = 0.2
        others = [j for j in ordinary if j != i]
        if others:
            P[i, others] = 0.7 / len(others)
        else:
            P[i, i] += 0.7
    P[priv, 1] = 0.7
    P[priv, 0] = 0.3
    return P


def _default_mix() -> dict[str, float]:
    return {name: 0.2 / len(ATTACKS) for name in ATTACKS}


@dataclass
class ScenarioConfig:
    """Synthetic scenario.

    ``attack_mix`` maps attack vector -> attack flows as a fraction of the
    benign flow total (default: 0.2 split evenly, i.e. about 5:1
    benign:malicious). Attack traffic is emitted in whole windows of ``W``
    flows, at most ``windows_per_attacker`` per attacker address.
    """

    num_operations: int = 6
    users: int = 10
    flows_per_user: int = 2000
    attack_mix: dict[str, float] = field(default_factory=_default_mix)
    seed: int = 0
    W: int = 50
    windows_per_attacker: int = 4
    # mean benign think time between a user's flows (seconds)
    mean_gap: float = 3.0
    scripted_dispersion: float = 0.35
    session_transition: list[list[float]] | None = None

    def __post_init__(self):
        if self.session_transition is None:
            self.session_transition = default_transitions(self.num_operations).tolist()

    @property
    def transitions(self) -> np.ndarray:
        return np.asarray(self.session_transition, dtype=np.float64)

    def validate(self) -> None:
        P = self.transitions
        k = self.num_operations
        if P.shape != (k, k):
            raise ConfigError(f"session_transition must be {k}x{k}, got {P.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1) > 1e-9):
            raise ConfigError("session_transition rows must be non-negative and sum to 1")
        unknown = set(self.attack_mix) - set(ATTACKS)
        if unknown:
            raise ConfigError(f"unknown attack vector(s): {sorted(unknown)}")
        if any(not 0 <= f <= 1 for f in self.attack_mix.values()):
            raise ConfigError("attack fractions must lie in [0, 1]")
        if self.users < 0 or self.flows_per_user < 0 or self.W < 1:
            raise ConfigError("users, flows_per_user must be >= 0 and W >= 1")
        if self.windows_per_attacker < 1 or self.mean_gap <= 0:
            raise ConfigError("windows_per_attacker and mean_gap must be positive")
        if not 0 < self.scripted_dispersion <= 1:
            raise ConfigError("scripted_dispersion must lie in (0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except FileNotFoundError as exc:
        raise ConfigError(f"scenario file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"scenario file is not valid YAML: {exc}") from exc
    try:
        cfg = ScenarioConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad scenario file: {exc}") from exc
    cfg.validate()
    return cfg


def _rng(config: ScenarioConfig, stream: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, _STREAMS[stream]])))


def _record(user, t, sample, label) -> FlowRecord:
    sizes, iat, flags = sample
    return FlowRecord(user_key=user, first_seen=float(t), packet_sizes=tuple(int(s) for s in sizes),
                      inter_arrival=tuple(float(x) for x in iat),
                      tcp_flags=tuple(int(f) for f in flags), label=label)


def _markov_ops(rng, P, n, start=0) -> list[int]:
    ops = [start]
    cdf = np.cumsum(P, axis=1)
    for _ in range(n - 1):
        nxt = int(np.searchsorted(cdf[ops[-1]], rng.random(), side="right"))
        ops.append(min(nxt, len(P) - 1))
    return ops


def generate_benign(config: ScenarioConfig) -> list[FlowRecord]:
    """``users * flows_per_user`` benign flows, users in order, time-ordered within a user."""
    config.validate()
    rng = _rng(config, "benign")
    profiles = default_profiles(config.num_operations)
    P = config.transitions
    records = []
    for u in range(config.users):
        user = f"10.0.{u // 250}.{u % 250 + 1}"
        t = rng.uniform(0, 100)
        ops = _markov_ops(rng, P, config.flows_per_user)
        for op in ops:
            records.append(_record(user, t, profiles[op].sample(rng), BENIGN))
            t += 0.05 + rng.exponential(config.mean_gap)
    return records


def attack_window_counts(config: ScenarioConfig) -> dict[str, int]:
    """Whole attack windows per vector (largest-remainder apportionment)."""
    benign_total = config.users * config.flows_per_user
    vectors = [a for a in ATTACKS if config.attack_mix.get(a, 0) > 0]
    if not vectors:
        return {}
    shares = np.array([config.attack_mix[a] * benign_total / config.W for a in vectors])
    total = int(round(shares.sum()))
    counts = np.floor(shares).astype(int)
    order = np.argsort(-(shares - counts), kind="stable")
    for i in order[: max(0, total - counts.sum())]:
        counts[i] += 1
    return {a: int(c) for a, c in zip(vectors, counts)}


def _attackers(config: ScenarioConfig, name: str, n_windows: int):
    """Yield (user_key, n_flows) for each attacker address of ``name``."""
    idx = ATTACKS.index(name)
    a = 0
    while n_windows > 0:
        w = min(n_windows, config.windows_per_attacker)
        yield f"172.16.{idx}.{a + 1}", w * config.W
        n_windows -= w
        a += 1


def _dos_flow(rng):
    n = int(rng.integers(60, 90))
    sizes = [60] + rng.integers(60, 121, size=n - 1).tolist()
    flags = [SYN] + [PSH_ACK] * (n - 1)
    iat = [0.0] + rng.uniform(1e-6, 5e-6, size=n - 1).tolist()
    return sizes, iat, flags


def _scan_flow(rng):
    n = int(rng.integers(1, 3))
    return [int(rng.choice((44, 60)))] * n, [0.0] + [float(rng.uniform(1e-5, 1e-3))] * (n - 1), [SYN] * n


def _injection_flow(rng, profile):
    sizes, iat, flags = profile.sample(rng)
    middle = len(sizes) - 2
    k = int(rng.integers(1, min(3, middle) + 1))
    for pos in rng.choice(np.arange(1, middle + 1), size=k, replace=False):
        sizes[pos] = int(rng.integers(MAX_SIZE + 400, 9001))
        flags[pos] = PSH_ACK
    return sizes, iat, flags


def _brute_force_flow(rng, login):
    sizes, iat, flags = login.sample(rng, dispersion=0.5)
    sizes = [int(min(MAX_SIZE, s * rng.uniform(1.8, 2.6))) if f == PSH_ACK else s
             for s, f in zip(sizes, flags)]
    iat = [x * 0.2 for x in iat]
    return sizes, iat, flags


def inject_flow_level_attacks(config: ScenarioConfig, vectors=FLOW_ATTACKS) -> list[FlowRecord]:
    """Attack sessions whose individual flows deviate from every benign profile."""
    config.validate()
    counts = attack_window_counts(config)
    profiles = default_profiles(config.num_operations)
    P = config.transitions
    records = []
    for name in vectors:
        if name not in FLOW_ATTACKS:
            raise ConfigError(f"unknown flow-level attack {name!r}")
        rng = _rng(config, name)
        label = f"attack:{name}"
        for user, n in _attackers(config, name, counts.get(name, 0)):
            t = rng.uniform(0, 100)
            ops = _markov_ops(rng, P, n)
            for op in ops:
                if name == "dos":
                    sample, gap = _dos_flow(rng), rng.exponential(0.005)
                elif name == "scan":
                    sample, gap = _scan_flow(rng), rng.exponential(0.01)
                elif name == "injection":
                    sample, gap = _injection_flow(rng, profiles[op]), 0.05 + rng.exponential(config.mean_gap)
                else:
                    sample, gap = _brute_force_flow(rng, profiles[0]), 0.2 + rng.exponential(0.05)
                records.append(_record(user, t, sample, label))
                t += 1e-4 + gap
    return records


def _harvest_ops(rng, W, read_op, other_op):
    ops = np.full(W, read_op)
    ops[rng.choice(W, size=3, replace=False)] = other_op
    return ops.tolist()


def inject_behavior_level_attacks(config: ScenarioConfig, vectors=BEHAVIOR_ATTACKS) -> list[FlowRecord]:
    """Attack sessions built from in-profile flows with malicious sequencing.

    * ``harvesting``: 47 of every W flows are the read op, at near-constant short gaps.
    * ``bulk_bot``: a fixed dashboard/post cycle at near-constant gaps.
    * ``active_session``: the privileged op interleaved with ordinary ops and
      never preceded by login (transitions of benign probability 0).

    Bot flows (harvesting, bulk_bot) are drawn with ``scripted_dispersion``;
    hijacked-session flows with the full benign dispersion.
    """
    config.validate()
    counts = attack_window_counts(config)
    profiles = default_profiles(config.num_operations)
    k = config.num_operations
    read_op, browse_op, priv = 2, 3 if k > 4 else 1, k - 1
    post_op = k - 2
    s = config.scripted_dispersion
    median_gap = 0.05 + config.mean_gap * np.log(2)
    records = []
    for name in vectors:
        if name not in BEHAVIOR_ATTACKS:
            raise ConfigError(f"unknown behavior-level attack {name!r}")
        rng = _rng(config, name)
        label = f"attack:{name}"
        for user, n in _attackers(config, name, counts.get(name, 0)):
            t = rng.uniform(0, 100)
            ops: list[int] = []
            if name == "harvesting":
                for _ in range(n // config.W):
                    ops += _harvest_ops(rng, config.W, read_op, browse_op)
                base_gap = 0.4
            elif name == "bulk_bot":
                ops = [1 if i % 2 == 0 else post_op for i in range(n)]
                base_gap = median_gap
            else:
                ordinary = [j for j in range(1, priv) if j != 1] or [1]
                ops = [priv if i % 2 == 0 else int(rng.choice(ordinary)) for i in range(n)]
                base_gap = None
            # session hijackers browse by hand; only the bots are scripted
            disp = 1.0 if name == "active_session" else s
            for op in ops:
                records.append(_record(user, t, profiles[op].sample(rng, dispersion=disp), label))
                if base_gap is None:
                    t += 0.05 + rng.exponential(config.mean_gap)
                else:
                    t += base_gap * rng.uniform(0.99, 1.01)
    return records


def infer_operation(record: FlowRecord, profiles: list[OperationProfile]) -> int | None:
    """Generating op of a benign or behavior-level flow, or None.

    Exact whenever the profiles' packet-count ranges are disjoint, as the
    hand-set defaults are.
    """
    for p in profiles:
        lo, hi = p.packet_count
        if lo <= record.packet_count <= hi:
            return p.op_id
    return None


def generate_scenario(config: ScenarioConfig, attacks: bool = True) -> list[FlowRecord]:
    records = generate_benign(config)
    if attacks:
        records += inject_flow_level_attacks(config)
        records += inject_behavior_level_attacks(config)
    logger.info("generated %d flows (seed=%d)", len(records), config.seed)
    return records


def scenario_manifest(config: ScenarioConfig) -> dict[str, Any]:
    return {
        "seed": config.seed,
        "prng": PRNG,
        "numpy_version": np.__version__,
        "scenario": config.to_dict(),
        "profiles": [dataclasses.asdict(p) for p in default_profiles(config.num_operations)],
        "attack_windows": attack_window_counts(config),
    }


def write_manifest(config: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_manifest(config), indent=2, sort_keys=True) + "\n")
