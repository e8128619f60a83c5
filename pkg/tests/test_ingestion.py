import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blade.errors import ConfigError, DataError, RecordError, SchemaError
from blade.ingestion import (
    FeatureSequence,
    FlowRecord,
    MultiFlowSample,
    TrainingDataset,
    build_feature_sequence,
    extract_multiflow_samples,
    parse_flow_records,
    split_train_test,
    write_flow_records,
)

from conftest import make_record

HEADER = "user_key,first_seen,packet_sizes,inter_arrival,tcp_flags,label\n"


def test_parse_three_packet_row(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text(HEADER + "10.0.0.1,1.5,60;1500;60,0;0.01;0.2,2;24;17,benign\n")
    (rec,) = parse_flow_records(p)
    assert rec.packet_sizes == (60, 1500, 60)
    assert rec.inter_arrival == (0.0, 0.01, 0.2)
    assert rec.tcp_flags == (2, 24, 17)
    assert rec.first_seen == 1.5 and rec.label == "benign"


def test_empty_packet_list_names_row(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text(HEADER + "a,0,60,0,2,benign\n" + "a,1,,,,benign\n")
    with pytest.raises(RecordError) as exc:
        parse_flow_records(p)
    assert exc.value.row == 1
    assert "row 1" in str(exc.value)


@pytest.mark.parametrize("row", [
    "a,0,60;x,0;0.1,2;24,benign",        # non-numeric
    "a,0,60;-5,0;0.1,2;24,benign",       # negative size
    "a,0,60;60,0;0.1;0.2,2;24,benign",   # length mismatch
    "a,-1,60,0,2,benign",                 # negative timestamp
    "a,0,60,0,2,malware",                 # bad label
    "a,0,60;60,0.5;0.1,2;24,benign",     # first gap not zero
])
def test_malformed_rows_rejected(tmp_path, row):
    p = tmp_path / "f.csv"
    p.write_text(HEADER + row + "\n")
    with pytest.raises(RecordError):
        parse_flow_records(p)


def test_missing_column_is_schema_error(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("user_key,first_seen,packet_sizes,inter_arrival,label\na,0,60,0,benign\n")
    with pytest.raises(SchemaError):
        parse_flow_records(p)


def test_missing_file_is_schema_error(tmp_path):
    with pytest.raises(SchemaError):
        parse_flow_records(tmp_path / "nope.csv")


def test_jsonl_round_trip(tmp_path):
    recs = [make_record(t=i * 0.1, label="attack:dos" if i % 2 else "benign") for i in range(5)]
    p = tmp_path / "f.jsonl"
    write_flow_records(recs, p)
    assert parse_flow_records(p) == recs
    json.loads(p.read_text().splitlines()[0])


def test_reparse_is_field_identical(tmp_path):
    from blade.synth import ScenarioConfig, generate_scenario

    recs = generate_scenario(ScenarioConfig(users=2, flows_per_user=60, W=10, seed=3))
    p = tmp_path / "f.csv"
    write_flow_records(recs, p)
    first = parse_flow_records(p)
    assert first == recs
    assert parse_flow_records(p) == first


def test_count_preserved_at_reported_dataset_size(tmp_path):
    # 597296 benign + 123474 malicious rows, single-packet flows to keep it quick
    n_benign, n_attack = 597296, 123474
    p = tmp_path / "big.csv"
    with p.open("w") as fh:
        fh.write(HEADER)
        fh.writelines("u%d,%d,60,0,2,benign\n" % (i % 97, i) for i in range(n_benign))
        fh.writelines("x%d,%d,60,0,2,attack:scan\n" % (i % 13, i) for i in range(n_attack))
    recs = parse_flow_records(p)
    assert len(recs) == n_benign + n_attack
    assert sum(r.label == "benign" for r in recs) == n_benign


def test_padding_and_shape():
    fs = build_feature_sequence(make_record(sizes=(60, 1500, 60)), L=5)
    assert fs.matrix.shape == (3, 5)
    assert np.all(fs.matrix[:, 3:] == 0)
    assert list(fs.matrix[0, :3]) == [60, 1500, 60]


def test_truncation_keeps_first_L():
    sizes = tuple(range(100, 160))
    fs = build_feature_sequence(make_record(sizes=sizes), L=50)
    assert fs.matrix.shape == (3, 50)
    assert list(fs.matrix[0]) == list(sizes[:50])


def test_unsupported_channel():
    with pytest.raises(ConfigError):
        build_feature_sequence(make_record(), 5, channels=("packet_sizes", "ttl"))


def _seqs(user, n, t0=0.0, label="benign"):
    return [FeatureSequence(np.zeros((3, 4)), t0 + i, label, user) for i in range(n)]


def test_windows_drop_remainder():
    assert len(extract_multiflow_samples(_seqs("a", 120), 50)) == 2
    assert extract_multiflow_samples(_seqs("a", 49), 50) == []


def test_windows_never_mix_users():
    samples = extract_multiflow_samples(_seqs("a", 50) + _seqs("b", 50), 50)
    assert len(samples) == 2
    assert {s.user_key for s in samples} == {"a", "b"}
    for s in samples:
        assert all(f.user_key == s.user_key for f in s.flows)


def test_windows_sort_by_time():
    seqs = _seqs("a", 10)[::-1]
    (s,) = extract_multiflow_samples(seqs, 10)
    assert list(s.timestamps) == sorted(s.timestamps)


def test_group_by_ip_merges_ports():
    seqs = _seqs("10.0.0.1:443", 5) + _seqs("10.0.0.1:8443", 5, t0=100)
    assert len(extract_multiflow_samples(seqs, 10, group_by="key")) == 0
    (s,) = extract_multiflow_samples(seqs, 10, group_by="ip")
    assert s.user_key == "10.0.0.1"


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.floats(0, 1e6, allow_nan=False)), max_size=200),
       st.integers(1, 20))
def test_window_conservation_and_order(items, W):
    seqs = [FeatureSequence(np.zeros((3, 2)), t, "benign", f"u{u}") for u, t in items]
    samples = extract_multiflow_samples(seqs, W)
    counts = {}
    for u, _ in items:
        counts[u] = counts.get(u, 0) + 1
    assert len(samples) == sum(c // W for c in counts.values())
    for s in samples:
        assert len(s.flows) == W
        assert np.all(np.diff(s.timestamps) >= 0)


def _windows(n_benign, n_mal, W=2):
    out = []
    for i in range(n_benign):
        out.append(MultiFlowSample(_seqs(f"b{i}", W), f"b{i}"))
    for i in range(n_mal):
        out.append(MultiFlowSample(_seqs(f"m{i}", W, label="attack:dos"), f"m{i}"))
    return out


def test_split_counts_at_reported_sizes():
    samples = _windows(11965, 2480, W=1)
    train, test = split_train_test(samples, 0.7, seed=1)
    assert len(train) == math.floor(0.7 * 11965) == 8375
    assert sum(not s.is_benign for s in test) == 2480
    assert len(train) + len(test) == 11965 + 2480


def test_split_deterministic():
    samples = _windows(50, 5)
    a = split_train_test(samples, 0.7, seed=9)
    b = split_train_test(samples, 0.7, seed=9)
    assert [s.user_key for s in a[0].samples] == [s.user_key for s in b[0].samples]
    assert [s.user_key for s in a[1]] == [s.user_key for s in b[1]]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(0, 40), st.floats(0.05, 0.95), st.integers(0, 10_000))
def test_split_purity(nb, nm, ratio, seed):
    train, test = split_train_test(_windows(nb, nm), ratio, seed)
    assert all(s.is_benign for s in train.samples)
    assert sum(not s.is_benign for s in test) == nm


def test_split_needs_benign():
    with pytest.raises(DataError):
        split_train_test(_windows(0, 3), 0.7, 0)


def test_training_dataset_rejects_attacks():
    with pytest.raises(DataError):
        TrainingDataset(_windows(1, 1))


def test_window_label():
    w = MultiFlowSample(_seqs("a", 3)[:2] + [FeatureSequence(np.zeros((3, 4)), 5, "attack:scan", "a")], "a")
    assert w.label == "attack:scan" and not w.is_benign
