import copy
import json

import pytest
import yaml

from blade.cli import main

from conftest import TINY


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "scenario.yaml").write_text("users: 10\nflows_per_user: 200\nseed: 3\n")
    (d / "tiny.yaml").write_text(yaml.safe_dump(copy.deepcopy(TINY)))
    assert main(["synthesize", "--config", str(d / "scenario.yaml"), "--part", "benign",
                 "--out", str(d / "benign.csv")]) == 0
    assert main(["synthesize", "--config", str(d / "scenario.yaml"), "--part", "attacks",
                 "--out", str(d / "attacks.csv")]) == 0
    assert main(["train", "--config", str(d / "tiny.yaml"), "--data", str(d / "benign.csv"),
                 "--out", str(d / "bundle")]) == 0
    return d


def test_synthesize_writes_manifest(workspace):
    m = json.loads((workspace / "benign.manifest.json").read_text())
    assert m["seed"] == 3
    assert m["scenario"]["users"] == 10
    assert sum(1 for _ in open(workspace / "benign.csv")) == 2001


def test_train_writes_bundle_and_heldout(workspace):
    assert (workspace / "bundle" / "manifest.json").exists()
    held = workspace / "bundle" / "heldout_benign.csv"
    # 40 benign windows, floor(0.7 * 40) = 28 train, 12 held out
    assert sum(1 for _ in open(held)) == 12 * 50 + 1


def test_detect_and_evaluate(workspace, capsys):
    held = workspace / "bundle" / "heldout_benign.csv"
    attacks = workspace / "attacks.csv"
    results = workspace / "results.jsonl"
    capsys.readouterr()
    assert main(["detect", "--bundle", str(workspace / "bundle"), "--data", str(held),
                 "--data", str(attacks), "--out", str(results)]) == 0
    summary = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    lines = [json.loads(x) for x in results.read_text().splitlines()]
    assert summary["windows"] == len(lines) > 12
    assert summary["skipped_flows"] == 0
    rec = lines[0]
    assert set(rec) == {"user_key", "window_index", "verdict", "decision_value", "flows"}
    assert len(rec["flows"]) == 50
    assert rec["verdict"] == ("anomalous" if rec["decision_value"] < 0 else "benign")
    report = workspace / "report.json"
    assert main(["evaluate", "--results", str(results), "--data", str(held), "--data", str(attacks),
                 "--bundle", str(workspace / "bundle"), "--out", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert rep["counts"]["windows"] == len(lines)
    assert rep["counts"]["benign"] == 12
    assert "silhouette" in rep["clustering"]


def test_detect_reports_skipped_flows(workspace, tmp_path, capsys):
    lines = (workspace / "benign.csv").read_text().splitlines()
    # one user's first 60 flows: one window plus 10 leftovers
    user = lines[1].split(",")[0]
    mine = [x for x in lines[1:] if x.split(",")[0] == user][:60]
    part = tmp_path / "part.csv"
    part.write_text("\n".join([lines[0]] + mine) + "\n")
    capsys.readouterr()
    assert main(["detect", "--bundle", str(workspace / "bundle"), "--data", str(part),
                 "--out", str(tmp_path / "r.jsonl")]) == 0
    summary = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert summary == {"windows": 1, "anomalous": summary["anomalous"], "skipped_flows": 10}


def test_purity_guard(workspace):
    assert main(["train", "--config", str(workspace / "tiny.yaml"),
                 "--data", str(workspace / "attacks.csv"), "--out", str(workspace / "nope")]) == 2
    assert not (workspace / "nope").exists()


def test_ablate_single_variant(workspace, tmp_path):
    both = tmp_path / "all.csv"
    text = (workspace / "benign.csv").read_text()
    text += "".join((workspace / "attacks.csv").read_text().splitlines(True)[1:])
    both.write_text(text)
    out = tmp_path / "ablate.json"
    assert main(["ablate", "--config", str(workspace / "tiny.yaml"), "--data", str(both),
                 "--variant", "3", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["variant"] == 3
    assert rep["variant_name"] == "w/o anomaly scores"
    assert rep["counts"]["malicious"] > 0


def test_usage_errors_exit_1(workspace, capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 1
    assert main(["ablate", "--config", str(workspace / "tiny.yaml"), "--data",
                 str(workspace / "benign.csv"), "--variant", "7"]) == 1
    bad = workspace / "bad.yaml"
    bad.write_text("flow_autoencoder:\n  hidden: 3\n")
    assert main(["train", "--config", str(bad), "--data", str(workspace / "benign.csv")]) == 1


def test_data_errors_exit_2(workspace, tmp_path):
    broken = tmp_path / "broken.csv"
    broken.write_text("user_key,first_seen,packet_sizes,inter_arrival,tcp_flags,label\n"
                      "u,1.0,60;x,0;0.1,2;24,benign\n")
    assert main(["detect", "--bundle", str(workspace / "bundle"), "--data", str(broken)]) == 2
    assert main(["detect", "--bundle", str(workspace / "bundle"),
                 "--data", str(tmp_path / "absent.csv")]) == 2


def test_model_errors_exit_3(workspace, tmp_path):
    assert main(["detect", "--bundle", str(tmp_path / "none"),
                 "--data", str(workspace / "benign.csv")]) == 3
    other = copy.deepcopy(TINY)
    other["data"] = {"W": 25}
    cfg = tmp_path / "w25.yaml"
    cfg.write_text(yaml.safe_dump(other))
    assert main(["detect", "--bundle", str(workspace / "bundle"), "--config", str(cfg),
                 "--data", str(workspace / "benign.csv")]) == 3
