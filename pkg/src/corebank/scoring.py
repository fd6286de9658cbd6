"""Nearest-neighbor anomaly scores for patch grids and whole images.

A patch embedding's anomaly score is its distance to the nearest memory
bank element. The image-level score is the largest patch score, reweighted
by how unusual that patch is relative to the bank neighborhood of its
nearest element:

    w = 1 - exp(|x* - c*|) / sum_{c in N_b(c*)} exp(|x* - c|)

with x* the max-score embedding, c* its nearest bank element and N_b(c*)
the b bank elements closest to c*, c* among them. Since c* is in the sum,
0 <= w < 1 and the image score w * s*_pix never exceeds the raw patch
score. Anomaly maps come from bilinearly upsampling the patch-score grid
to image resolution (corner-aligned), then optional Gaussian smoothing.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .distance import k_nearest, nearest, pairwise_distances
from .tensor_io import EmbeddingBatch

DEFAULT_NEIGHBOR_B = 9
DEFAULT_SMOOTHING_SIGMA = 4.0


@dataclass
class PatchScores:
    """Per-patch nearest-bank distances on the image's patch grid.

    scores and argmin_indices are (H_p, W_p); entry (i, j) belongs to the
    embedding at row-major position i * W_p + j of the source batch.
    """

    scores: np.ndarray
    argmin_indices: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        if self.scores.ndim != 2 or self.scores.shape != self.argmin_indices.shape:
            raise ValueError(
                f"scores and argmin_indices must be matching 2-D grids, got "
                f"{self.scores.shape} and {self.argmin_indices.shape}"
            )

    @property
    def max_score(self) -> float:
        return float(self.scores.max())


@dataclass
class AnomalyMap:
    """Image-resolution anomaly scores plus the image-level score."""

    pixel_scores: np.ndarray
    image_score: float
    source_id: str = ""

    def __post_init__(self):
        if self.pixel_scores.ndim != 2:
            raise ValueError(f"pixel map must be 2-D, got shape {self.pixel_scores.shape}")
        if not np.isfinite(self.image_score):
            raise ValueError("image score must be finite")


def score_patches(bank, X: EmbeddingBatch) -> PatchScores:
    """Distance of every grid embedding to its nearest bank element.

    Requires a grid-shaped batch and a non-empty bank.
    """
    if len(bank) == 0:
        raise ValueError("cannot score against an empty memory bank")
    if X.grid is None:
        raise ValueError(f"batch {X.source_id!r} has no patch grid")
    d, idx = nearest(X.embeddings, bank.elements)
    hp, wp = X.grid
    return PatchScores(
        scores=d.reshape(hp, wp),
        argmin_indices=idx.reshape(hp, wp),
        source_id=X.source_id,
    )


def image_score(bank, patches: PatchScores, X: EmbeddingBatch, b: int = DEFAULT_NEIGHBOR_B) -> float:
    """Image-level anomaly score: reweighted maximal patch score.

    b is the neighborhood size around c*; the bank must hold at least b
    elements and b must be >= 2.
    """
    if b < 2:
        raise ValueError(f"neighborhood size b must be >= 2, got {b}")
    if len(bank) < b:
        raise ValueError(f"bank holds {len(bank)} elements, need at least b = {b}")
    flat_scores = patches.scores.ravel()
    i_star = int(np.argmax(flat_scores))  # lowest row-major index on ties
    s_star = float(flat_scores[i_star])
    x_star = X.embeddings[i_star]
    c_star_idx = int(patches.argmin_indices.ravel()[i_star])
    _, nbr_idx = k_nearest(bank.elements[c_star_idx], bank.elements, b)
    d_x = pairwise_distances(x_star[None, :], bank.elements[nbr_idx])[0].astype(np.float64)
    # nbr_idx[0] is c* itself (its nearest element is itself at distance 0),
    # so d_x[0] = |x* - c*| is the numerator term. Shift by the max before
    # exponentiating; the ratio is unchanged and exp cannot overflow.
    d_x -= d_x.max()
    e = np.exp(d_x)
    w = 1.0 - e[0] / e.sum()
    return float(w * s_star)


def build_map(patches: PatchScores, image_size: tuple[int, int],
              smoothing_sigma: float = DEFAULT_SMOOTHING_SIGMA,
              image_score: float = 0.0) -> AnomalyMap:
    """Upsample a patch-score grid to image resolution.

    Bilinear with grid corners pinned to image corners, so a 1x1 grid (or a
    constant one) yields a constant map. smoothing_sigma > 0 applies a
    Gaussian blur after upsampling; 0 leaves the raw interpolation.
    """
    h, w = int(image_size[0]), int(image_size[1])
    hp, wp = patches.scores.shape
    if h < hp or w < wp:
        raise ValueError(
            f"image size {(h, w)} smaller than score grid {(hp, wp)}"
        )
    grid = patches.scores.astype(np.float64)
    rows = np.linspace(0.0, hp - 1.0, h)
    cols = np.linspace(0.0, wp - 1.0, w)
    coords = np.stack(np.meshgrid(rows, cols, indexing="ij"))
    up = ndimage.map_coordinates(grid, coords, order=1, mode="nearest")
    if smoothing_sigma > 0:
        up = ndimage.gaussian_filter(up, sigma=smoothing_sigma)
    return AnomalyMap(
        pixel_scores=up.astype(np.float32),
        image_score=float(image_score),
        source_id=patches.source_id,
    )


def normalize_map_u8(pixel_scores: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Min-max normalize a pixel map to uint8 against run-level bounds.

    lo/hi are the smallest and largest pixel values over the run so maps
    stay comparable to each other; hi == lo gives an all-zero map.
    """
    span = hi - lo
    if span <= 0:
        return np.zeros_like(pixel_scores, dtype=np.uint8)
    scaled = (pixel_scores.astype(np.float64) - lo) / span
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
