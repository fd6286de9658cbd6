import numpy as np
import pytest

from corebank.detector import CoresetAnomalyDetector
from corebank.tensor_io import EmbeddingBatch


def make_batch(rng, n=9, dim=4, grid=(3, 3)):
    return EmbeddingBatch(rng.normal(size=(n, dim)).astype(np.float32), grid=grid)


def test_fit_builds_bank_and_respects_capacity():
    rng = np.random.default_rng(0)
    det = CoresetAnomalyDetector(capacity=8)
    det.fit(rng.normal(size=(30, 4)).astype(np.float32))
    assert len(det.bank_) == 8


def test_partial_fit_accumulates():
    rng = np.random.default_rng(1)
    det = CoresetAnomalyDetector(capacity=50)
    det.partial_fit(rng.normal(size=(10, 3)).astype(np.float32))
    det.partial_fit(rng.normal(size=(10, 3)).astype(np.float32))
    assert len(det.bank_) == 20


def test_score_samples_are_negated_distances():
    det = CoresetAnomalyDetector(capacity=4)
    det.fit(np.array([[0.0], [10.0]], dtype=np.float32))
    s = det.score_samples(np.array([[0.0], [3.0]], dtype=np.float32))
    assert s.tolist() == [0.0, -3.0]
    assert (det.decision_function(np.array([[3.0]], dtype=np.float32)) == s[1]).all()


def test_members_score_highest():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, 5)).astype(np.float32)
    det = CoresetAnomalyDetector(capacity=20).fit(X)
    inlier = det.score_samples(X)
    outlier = det.score_samples(X + 100.0)
    assert inlier.max() == 0.0
    assert (outlier < inlier.min() - 1.0).all()


def test_unfitted_raises():
    det = CoresetAnomalyDetector()
    with pytest.raises(ValueError):
        det.score_samples(np.zeros((1, 2), np.float32))


def test_get_params_round_trip():
    det = CoresetAnomalyDetector(capacity=123, neighbor_b=5, smoothing_sigma=1.5)
    params = det.get_params()
    assert params["capacity"] == 123
    clone = CoresetAnomalyDetector(**params)
    assert clone.neighbor_b == 5 and clone.smoothing_sigma == 1.5


def test_grid_methods_produce_consistent_scores():
    rng = np.random.default_rng(3)
    det = CoresetAnomalyDetector(capacity=64, neighbor_b=4, smoothing_sigma=0.0)
    det.fit(rng.normal(size=(64, 4)).astype(np.float32))
    batch = make_batch(rng)
    ps = det.patch_scores(batch)
    assert ps.scores.shape == (3, 3)
    s = det.image_score(batch)
    assert 0 <= s < ps.scores.max()
    amap = det.anomaly_map(batch, (12, 12))
    assert amap.pixel_scores.shape == (12, 12)
    assert amap.image_score == pytest.approx(s)


def test_batch_input_to_fit():
    rng = np.random.default_rng(4)
    det = CoresetAnomalyDetector(capacity=16)
    det.fit(make_batch(rng, n=12, grid=(3, 4)))
    assert len(det.bank_) == 12
