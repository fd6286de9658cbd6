"""Estimator-style wrapper around the memory bank and the scoring ops.

Mirrors the sklearn outlier-detector conventions: fit builds the bank,
partial_fit folds further batches in, score_samples returns *negated*
nearest-bank distances so that larger means more normal, and
decision_function is its alias. The grid-aware operations (patch scores,
image score, anomaly map) are exposed as plain methods since they need an
EmbeddingBatch rather than a bare matrix.
"""

from sklearn.base import BaseEstimator

from .coreset import MemoryBank
from .distance import nearest
from .scoring import (
    DEFAULT_NEIGHBOR_B,
    DEFAULT_SMOOTHING_SIGMA,
    build_map,
    image_score,
    score_patches,
)
from .tensor_io import EmbeddingBatch
from .validation import as_float_matrix


class CoresetAnomalyDetector(BaseEstimator):
    """Nearest-neighbor anomaly detector over a fixed-capacity coreset.

    Parameters
    ----------
    capacity : int
        Maximum number of embeddings kept in the memory bank.
    neighbor_b : int
        Neighborhood size used to reweight the image-level score.
    smoothing_sigma : float
        Gaussian sigma applied to upsampled anomaly maps; 0 disables.
    """

    def __init__(self, capacity=10000, neighbor_b=DEFAULT_NEIGHBOR_B,
                 smoothing_sigma=DEFAULT_SMOOTHING_SIGMA):
        self.capacity = capacity
        self.neighbor_b = neighbor_b
        self.smoothing_sigma = smoothing_sigma

    def fit(self, X, y=None):
        """Build a fresh bank from X (n x D array or EmbeddingBatch)."""
        self.bank_ = MemoryBank(self.capacity)
        self.bank_.update(X)
        return self

    def partial_fit(self, X, y=None):
        """Fold another batch into the existing bank (creates one if needed)."""
        if not hasattr(self, "bank_"):
            self.bank_ = MemoryBank(self.capacity)
        self.bank_.update(X)
        return self

    def score_samples(self, X):
        """Negated nearest-bank distance per row; higher = more normal."""
        self._check_fitted()
        X = X.embeddings if isinstance(X, EmbeddingBatch) else as_float_matrix(X, "X")
        d, _ = nearest(X, self.bank_.elements)
        return -d

    def decision_function(self, X):
        return self.score_samples(X)

    def patch_scores(self, batch: EmbeddingBatch):
        """Nearest-bank distance per patch on the batch's grid."""
        self._check_fitted()
        return score_patches(self.bank_, batch)

    def image_score(self, batch: EmbeddingBatch) -> float:
        """Reweighted maximal patch score for one image."""
        self._check_fitted()
        patches = score_patches(self.bank_, batch)
        return image_score(self.bank_, patches, batch, b=self.neighbor_b)

    def anomaly_map(self, batch: EmbeddingBatch, image_size):
        """Image-resolution anomaly map plus the image-level score."""
        self._check_fitted()
        patches = score_patches(self.bank_, batch)
        s_img = image_score(self.bank_, patches, batch, b=self.neighbor_b)
        return build_map(patches, image_size, self.smoothing_sigma, image_score=s_img)

    def _check_fitted(self):
        if not hasattr(self, "bank_") or len(self.bank_) == 0:
            raise ValueError("detector is not fitted yet, call fit() first")
