import copy
import sys

import numpy as np
import pytest
import torch

from blade.ingestion import FlowRecord

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_record(user="10.0.0.1", t=0.0, sizes=(60, 1500, 60), label="benign", iat=None, flags=None):
    n = len(sizes)
    iat = iat if iat is not None else [0.0] + [0.01] * (n - 1)
    flags = flags if flags is not None else [2] + [24] * (n - 1)
    return FlowRecord(user, float(t), tuple(sizes), tuple(iat), tuple(flags), label)


@pytest.fixture
def record_factory():
    return make_record


TINY = {
    "flow_autoencoder": {"hidden_size": 8, "latent_dim": 4,
                         "training": {"epochs": 2, "batch_size": 256}},
    "behavior": {"extractor": {"hidden_size": 8, "latent_dim": 4,
                               "training": {"epochs": 3, "batch_size": 16}}},
    # a 2-epoch model has barely spread its latents
    "labeling": {"variance_threshold": 1e-6},
}


@pytest.fixture
def tiny_config():
    from blade.config import config_from_dict

    return config_from_dict(copy.deepcopy(TINY))


@pytest.fixture(scope="session")
def toy_records():
    from blade.synth import ScenarioConfig, generate_scenario

    return generate_scenario(ScenarioConfig(users=10, flows_per_user=200))


@pytest.fixture(scope="session")
def toy_trained(toy_records):
    from blade import pipeline
    from blade.config import config_from_dict

    benign = [r for r in toy_records if r.label == "benign"]
    return pipeline.train(benign, config_from_dict(copy.deepcopy(TINY)))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
