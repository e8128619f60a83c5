import itertools
import math
import warnings

import numpy as np
import pytest

from blade.behavior import (
    SCORE_CLAMP,
    BehaviorNormalizer,
    DetectionResult,
    OneClassBoundary,
    assemble_behavior_sample,
    encode_labels,
    fit_boundary,
    fit_normalizer,
    inter_flow_gaps,
    train_extractor,
)
from blade.config import EncoderConfig, TrainingConfig
from blade.errors import DataError, NotFittedError

DELTA = 1e-8


def norm(variant=0, K=6, median_gap=2.0):
    return BehaviorNormalizer(median_gap, K, DELTA, variant)


def window(rng, W=50):
    ts = np.cumsum(rng.exponential(2.0, size=W))
    return ts, rng.uniform(0, 25, size=W), rng.integers(-1, 6, size=W)


def test_sample_is_3_by_W_with_documented_rows(rng):
    ts, scores, labels = window(rng)
    S = assemble_behavior_sample(ts, scores, labels, norm())
    assert S.matrix.shape == (3, 50)
    assert S.rows == ("gap", "score", "label")
    assert S.matrix[0, 0] == 0
    np.testing.assert_allclose(S.matrix[0, 1:], np.diff(ts) / 2.0)
    scale = -math.log(DELTA)
    np.testing.assert_allclose(S.matrix[1], np.clip(scores / scale, 0, SCORE_CLAMP))
    np.testing.assert_allclose(S.matrix[2], (labels + 1) / 7)


def test_simultaneous_flows_give_zero_gaps(rng):
    _, scores, labels = window(rng)
    S = assemble_behavior_sample(np.full(50, 17.0), scores, labels, norm())
    assert np.all(S.matrix[0] == 0)


def test_all_noise_labels_encode_to_zero(rng):
    ts, scores, _ = window(rng)
    S = assemble_behavior_sample(ts, scores, np.full(50, -1), norm(K=6))
    assert np.all(S.matrix[2] == 0)


def test_score_row_clamped():
    ts = np.arange(4.0)
    S = assemble_behavior_sample(ts, [0.0, 18.42, 1e9, 27.6], [0, 0, 0, 0], norm())
    assert S.matrix[1, 0] == 0
    assert S.matrix[1, 2] == SCORE_CLAMP
    assert S.matrix[1].max() <= SCORE_CLAMP


def test_label_encoding_is_injective_for_each_K():
    for K in range(1, 40):
        codes = encode_labels(np.arange(-1, K), K)
        assert len(set(codes.tolist())) == K + 1
        assert codes[0] == 0 and codes[-1] == K / (K + 1)


def test_label_encoding_across_K_can_collide():
    # the encoding is relative to K; (0, K=1) and (1, K=3) share a code
    assert encode_labels([0], 1)[0] == encode_labels([1], 3)[0] == 0.5
    pairs = [(o, K) for K in range(1, 6) for o in range(-1, K)]
    codes = [encode_labels([o], K)[0] for o, K in pairs]
    assert len(set(codes)) < len(codes)


def test_misaligned_and_unsorted_raise(rng):
    ts, scores, labels = window(rng)
    with pytest.raises(DataError):
        assemble_behavior_sample(ts, scores[:-1], labels, norm())
    with pytest.raises(DataError):
        assemble_behavior_sample(ts, scores, labels[:-1], norm())
    with pytest.raises(DataError):
        assemble_behavior_sample(ts[::-1], scores, labels, norm())


def test_variants(rng):
    ts, scores, labels = window(rng)
    raw = rng.uniform(0, 3, size=50)
    v1 = assemble_behavior_sample(ts, scores, labels, norm(1), raw_losses=raw)
    np.testing.assert_array_equal(v1.matrix[1], raw)
    with pytest.raises(DataError):
        assemble_behavior_sample(ts, scores, labels, norm(1))
    v2 = assemble_behavior_sample(ts, scores, labels, norm(2))
    v3 = assemble_behavior_sample(ts, scores, labels, norm(3))
    full = assemble_behavior_sample(ts, scores, labels, norm(0))
    assert v2.matrix.shape == v3.matrix.shape == (2, 50)
    np.testing.assert_array_equal(v2.matrix, full.matrix[[0, 1]])
    np.testing.assert_array_equal(v3.matrix, full.matrix[[0, 2]])


def test_fit_normalizer_uses_median_gap():
    windows = [np.array([0.0, 1.0, 3.0]), np.array([10.0, 14.0, 15.0])]
    n = fit_normalizer(windows, 4)
    assert n.median_gap == 1.5
    assert fit_normalizer([np.zeros(3)], 4).median_gap == 1.0
    np.testing.assert_array_equal(inter_flow_gaps([1.0, 2.5, 2.5]), [0.0, 1.5, 0.0])


def test_extractor_output_length_and_determinism(rng):
    S = np.stack([assemble_behavior_sample(*window(rng), norm()).matrix for _ in range(8)])
    cfg = EncoderConfig(training=TrainingConfig(epochs=1, batch_size=8, seed=0))
    ex = train_extractor(S, cfg)
    X = ex.encode(S)
    assert X.shape == (8, 64)
    np.testing.assert_array_equal(X, ex.encode(S))


def test_extractor_loss_decreases(rng):
    S = np.stack([assemble_behavior_sample(*window(rng), norm()).matrix for _ in range(16)])
    cfg = EncoderConfig(hidden_size=16, latent_dim=8,
                        training=TrainingConfig(epochs=15, batch_size=16, seed=0))
    curve = train_extractor(S, cfg).curve.epoch_loss
    assert curve[-1] < curve[0]


def test_nu_bounds_in_sample_outliers(rng):
    X = rng.normal(size=(1000, 8))
    b = fit_boundary(X, nu=0.05)
    assert b.is_anomalous(X).mean() <= 0.05 + 0.02
    assert not b.is_anomalous(np.zeros(8))[0]


def test_far_point_is_anomalous(rng):
    X = rng.normal(size=(300, 4))
    b = fit_boundary(X)
    # kernel width 1 / sqrt(gamma) = 2 on the standardized scale
    far = np.array([100 * 2.0, 0, 0, 0])
    assert b.decision_function(far)[0] < 0
    assert b.is_anomalous(far)[0]


def test_identical_inputs_warn():
    with pytest.warns(RuntimeWarning, match="identical"):
        b = fit_boundary(np.ones((10, 3)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert b.decision_function(np.ones(3)).shape == (1,)


def test_boundary_errors():
    with pytest.raises(NotFittedError):
        OneClassBoundary().decision_function(np.zeros(3))
    with pytest.raises(DataError):
        fit_boundary(np.zeros((1, 3)))


@pytest.mark.parametrize("value, verdict", [(-1e-12, "anomalous"), (0.0, "benign"), (2.5, "benign")])
def test_verdict_sign_convention(value, verdict):
    r = DetectionResult("u", 3, value, [1.0, 2.0], [0.5, 19.0], [0, -1])
    assert r.verdict == verdict
    assert r.is_anomalous == (verdict == "anomalous")
    rec = r.to_record()
    assert rec["flows"][1] == {"tau": 2.0, "alpha": 19.0, "label": -1}
    assert DetectionResult.from_record(rec) == r


def test_every_label_code_in_unit_interval():
    for K, o in itertools.product(range(1, 10), range(-1, 9)):
        if o < K:
            assert 0 <= encode_labels([o], K)[0] < 1
